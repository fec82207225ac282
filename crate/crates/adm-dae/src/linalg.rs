//! Dense numeric linear algebra for the constant matrices of the
//! recursion.
//!
//! Everything the order-by-order iteration solves against is built from
//! two constant matrices: the mass matrix at the expansion point and the
//! constraint Jacobian there. This module factors them once, forms the
//! Schur complement G·M⁻¹·Gᵀ for the multiplier equation, and runs the
//! structural checks the method's assumptions call for:
//!
//! ```text
//!   rank G = n_λ          (constraints independent)
//!   zᵀ M z > 0 on Ker G   (mass positive where motion is possible)
//!   ( M  Gᵀ )
//!   ( G  0  )  nonsingular  (the saddle matrix of the index-3 system)
//! ```
//!
//! Systems are desk-scale dense, so the implementations are the classical
//! ones: partial-pivot LU with an exact reciprocal condition number (n
//! extra solves), column-pivoted Householder QR for rank, a full QR of Gᵀ
//! for an orthonormal kernel basis, and cyclic Jacobi sweeps for the
//! kernel eigenvalues. No external solver dependency is worth carrying for
//! 8×8 matrices, and owning the pivoting rules keeps the singularity
//! errors exact (a zero pivot is reported as such, not as a NaN storm).

use std::fmt;

use thiserror::Error;

use crate::series::TimePoly;

/// Factorizations flag near-singularity when the estimated condition
/// number exceeds 1e12 (reciprocal below this).
const RCOND_FLOOR: f64 = 1e-12;

/// Relative rank threshold for the constraint Jacobian, near the square
/// root of double machine epsilon.
const RANK_REL_TOL: f64 = 1e-10;

#[derive(Debug, Error, PartialEq)]
pub enum LinalgError {
    #[error("matrix entries must be finite")]
    NonFinite,
    #[error("matrix is exactly singular (zero pivot at column {column})")]
    Singular { column: usize },
    #[error("constraint Jacobian is rank deficient: rank {rank} < {needed}")]
    RankDeficient { rank: usize, needed: usize },
    #[error("Schur complement G·M⁻¹·Gᵀ is singular")]
    SingularSchur,
}

/// Row-major dense real matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<DenseMatrix, LinalgError> {
        assert_eq!(data.len(), rows * cols, "data length must match shape");
        if data.iter().any(|v| !v.is_finite()) {
            return Err(LinalgError::NonFinite);
        }
        Ok(DenseMatrix { rows, cols, data })
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<DenseMatrix, LinalgError> {
        let r = rows.len();
        let c = rows.first().map(|row| row.len()).unwrap_or(0);
        assert!(rows.iter().all(|row| row.len() == c), "ragged rows");
        DenseMatrix::new(r, c, rows.into_iter().flatten().collect())
    }

    pub fn zeros(rows: usize, cols: usize) -> DenseMatrix {
        DenseMatrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> DenseMatrix {
        let mut m = DenseMatrix::zeros(n, n);
        for i in 0..n {
            m.set(i, i, 1.0);
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn transpose(&self) -> DenseMatrix {
        let mut out = DenseMatrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.set(j, i, self.get(i, j));
            }
        }
        out
    }

    pub fn matmul(&self, rhs: &DenseMatrix) -> DenseMatrix {
        assert_eq!(self.cols, rhs.rows, "inner dimensions must agree");
        let mut out = DenseMatrix::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.get(i, k);
                if a == 0.0 {
                    continue;
                }
                for j in 0..rhs.cols {
                    out.data[i * rhs.cols + j] += a * rhs.get(k, j);
                }
            }
        }
        out
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(self.cols, x.len(), "dimension mismatch");
        (0..self.rows)
            .map(|i| (0..self.cols).map(|j| self.get(i, j) * x[j]).sum())
            .collect()
    }

    pub fn norm_fro(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Maximum absolute column sum.
    pub fn norm_one(&self) -> f64 {
        (0..self.cols)
            .map(|j| (0..self.rows).map(|i| self.get(i, j).abs()).sum())
            .fold(0.0, f64::max)
    }
}

impl fmt::Display for DenseMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for i in 0..self.rows {
            write!(f, "[")?;
            for j in 0..self.cols {
                if j > 0 {
                    write!(f, ", ")?;
                }
                write!(f, "{:.6e}", self.get(i, j))?;
            }
            writeln!(f, "]")?;
        }
        Ok(())
    }
}

/// Partial-pivot LU decomposition of a square matrix, with an exact
/// reciprocal condition number in the 1-norm (computed by solving for the
/// inverse columnwise; fine at this scale).
#[derive(Debug, Clone)]
pub struct Factorization {
    n: usize,
    // Combined L (unit lower, below diagonal) and U (upper) factors.
    lu: Vec<f64>,
    // Row i of the permuted system reads source row piv[i].
    piv: Vec<usize>,
    rcond: f64,
}

pub fn lu_factor(a: &DenseMatrix) -> Result<Factorization, LinalgError> {
    assert_eq!(a.rows, a.cols, "LU factorization needs a square matrix");
    let n = a.rows;
    let mut lu = a.data.clone();
    let mut piv: Vec<usize> = (0..n).collect();

    for col in 0..n {
        let mut p = col;
        let mut best = lu[col * n + col].abs();
        for r in col + 1..n {
            let v = lu[r * n + col].abs();
            if v > best {
                best = v;
                p = r;
            }
        }
        if lu[p * n + col] == 0.0 {
            return Err(LinalgError::Singular { column: col });
        }
        if p != col {
            for c in 0..n {
                lu.swap(col * n + c, p * n + c);
            }
            piv.swap(col, p);
        }
        let d = lu[col * n + col];
        for r in col + 1..n {
            let m = lu[r * n + col] / d;
            lu[r * n + col] = m;
            if m == 0.0 {
                continue;
            }
            for c in col + 1..n {
                lu[r * n + c] -= m * lu[col * n + c];
            }
        }
    }

    let mut f = Factorization {
        n,
        lu,
        piv,
        rcond: 0.0,
    };
    let inv_norm_one = (0..n)
        .map(|j| {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            f.solve_vec(&e).iter().map(|v| v.abs()).sum::<f64>()
        })
        .fold(0.0, f64::max);
    f.rcond = if n == 0 {
        f64::INFINITY
    } else {
        1.0 / (a.norm_one() * inv_norm_one)
    };
    Ok(f)
}

impl Factorization {
    pub fn n(&self) -> usize {
        self.n
    }

    /// Reciprocal condition number in the 1-norm.
    pub fn rcond(&self) -> f64 {
        self.rcond
    }

    pub fn near_singular(&self) -> bool {
        self.rcond < RCOND_FLOOR
    }

    pub fn solve_vec(&self, b: &[f64]) -> Vec<f64> {
        assert_eq!(b.len(), self.n, "right-hand side length mismatch");
        let n = self.n;
        let mut x = vec![0.0; n];
        for i in 0..n {
            let row = &self.lu[i * n..(i + 1) * n];
            let mut s = b[self.piv[i]];
            for (l, xj) in row[..i].iter().zip(&x) {
                s -= l * xj;
            }
            x[i] = s;
        }
        for i in (0..n).rev() {
            let row = &self.lu[i * n..(i + 1) * n];
            let mut s = x[i];
            for (l, xj) in row[i + 1..].iter().zip(&x[i + 1..]) {
                s -= l * xj;
            }
            x[i] = s / row[i];
        }
        x
    }

    pub fn solve_mat(&self, b: &DenseMatrix) -> DenseMatrix {
        assert_eq!(b.rows, self.n, "right-hand side height mismatch");
        let mut out = DenseMatrix::zeros(self.n, b.cols);
        for j in 0..b.cols {
            let col: Vec<f64> = (0..self.n).map(|i| b.get(i, j)).collect();
            let x = self.solve_vec(&col);
            for (i, &xi) in x.iter().enumerate() {
                out.set(i, j, xi);
            }
        }
        out
    }

    /// Solves with a polynomial right-hand side, coefficientwise: the
    /// matrix is constant in time, so each degree separates. Works in the
    /// scaled-coefficient representation directly, so no basis conversion
    /// enters the recursion.
    pub fn solve_polys(&self, rhs: &[TimePoly]) -> Vec<TimePoly> {
        assert_eq!(rhs.len(), self.n, "right-hand side length mismatch");
        let cap = rhs.first().map(|p| p.cap()).unwrap_or(0);
        for p in rhs {
            assert_eq!(p.cap(), cap, "degree caps must match");
        }
        let mut scaled: Vec<Vec<f64>> = vec![Vec::with_capacity(cap + 1); self.n];
        for k in 0..=cap {
            let b: Vec<f64> = rhs.iter().map(|p| p.deriv(k)).collect();
            if b.iter().all(|v| *v == 0.0) {
                for out in &mut scaled {
                    out.push(0.0);
                }
                continue;
            }
            let x = self.solve_vec(&b);
            for (out, xi) in scaled.iter_mut().zip(x) {
                out.push(xi);
            }
        }
        scaled
            .into_iter()
            .map(|d| TimePoly::from_scaled(d, cap))
            .collect()
    }
}

/// Numerical rank by column-pivoted Householder QR: the count of diagonal
/// entries of R above `rel_tol` times the Frobenius norm.
pub fn numerical_rank(a: &DenseMatrix, rel_tol: f64) -> usize {
    let m = a.rows;
    let n = a.cols;
    let tol = rel_tol * a.norm_fro();
    let mut w = a.data.clone();
    let at = |w: &[f64], i: usize, j: usize| w[i * n + j];

    let mut rank = 0;
    for k in 0..m.min(n) {
        // Pivot: remaining column with the largest norm over rows k..m.
        let mut best_j = k;
        let mut best = -1.0;
        for j in k..n {
            let s: f64 = (k..m).map(|i| at(&w, i, j).powi(2)).sum();
            if s > best {
                best = s;
                best_j = j;
            }
        }
        let norm = best.max(0.0).sqrt();
        if norm <= tol {
            break;
        }
        if best_j != k {
            for i in 0..m {
                w.swap(i * n + k, i * n + best_j);
            }
        }
        // Householder vector for column k.
        let alpha = if at(&w, k, k) >= 0.0 { -norm } else { norm };
        let mut v: Vec<f64> = (k..m).map(|i| at(&w, i, k)).collect();
        v[0] -= alpha;
        let vtv: f64 = v.iter().map(|x| x * x).sum();
        if vtv > 0.0 {
            let beta = 2.0 / vtv;
            for j in k..n {
                let dot: f64 = (k..m).map(|i| v[i - k] * at(&w, i, j)).sum();
                let s = beta * dot;
                for i in k..m {
                    w[i * n + j] -= s * v[i - k];
                }
            }
        }
        rank += 1;
    }
    rank
}

// Orthonormal basis of Ker G as the trailing columns of the full Q from a
// Householder QR of Gᵀ. Valid when G has full row rank (checked by the
// caller); returns an n_p×(n_p−n_λ) matrix, possibly with zero columns.
fn kernel_basis(g: &DenseMatrix) -> DenseMatrix {
    let a = g.transpose();
    let m = a.rows; // n_p
    let k = a.cols; // n_λ
    let mut w = a.data.clone();
    let mut reflectors: Vec<(Vec<f64>, f64)> = Vec::new();

    for col in 0..k.min(m) {
        let norm: f64 = (col..m).map(|i| w[i * k + col].powi(2)).sum::<f64>().sqrt();
        if norm == 0.0 {
            continue;
        }
        let alpha = if w[col * k + col] >= 0.0 { -norm } else { norm };
        let mut v: Vec<f64> = (col..m).map(|i| w[i * k + col]).collect();
        v[0] -= alpha;
        let vtv: f64 = v.iter().map(|x| x * x).sum();
        if vtv == 0.0 {
            continue;
        }
        let beta = 2.0 / vtv;
        for j in col..k {
            let dot: f64 = (col..m).map(|i| v[i - col] * w[i * k + j]).sum();
            let s = beta * dot;
            for i in col..m {
                w[i * k + j] -= s * v[i - col];
            }
        }
        reflectors.push((v, beta));
    }

    // Q = H_0 H_1 … H_{r-1}; apply reflectors in reverse to the identity.
    let mut q = DenseMatrix::identity(m);
    for (v, beta) in reflectors.iter().rev() {
        let off = m - v.len();
        for j in 0..m {
            let dot: f64 = (0..v.len()).map(|i| v[i] * q.get(off + i, j)).sum();
            let s = beta * dot;
            for (i, &vi) in v.iter().enumerate() {
                let cur = q.get(off + i, j);
                q.set(off + i, j, cur - s * vi);
            }
        }
    }

    let mut z = DenseMatrix::zeros(m, m - k.min(m));
    for j in k.min(m)..m {
        for i in 0..m {
            z.set(i, j - k.min(m), q.get(i, j));
        }
    }
    z
}

// Smallest eigenvalue of a small symmetric matrix by cyclic Jacobi sweeps.
fn jacobi_min_eigenvalue(mut a: DenseMatrix) -> f64 {
    let n = a.rows;
    assert_eq!(n, a.cols);
    if n == 0 {
        return f64::INFINITY;
    }
    let scale = a.norm_fro() + 1.0;
    for _sweep in 0..60 {
        let mut off = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                off += a.get(i, j).powi(2);
            }
        }
        if off.sqrt() <= 1e-14 * scale {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a.get(p, q);
                if apq == 0.0 {
                    continue;
                }
                let theta = (a.get(q, q) - a.get(p, p)) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for i in 0..n {
                    let aip = a.get(i, p);
                    let aiq = a.get(i, q);
                    a.set(i, p, c * aip - s * aiq);
                    a.set(i, q, s * aip + c * aiq);
                }
                for i in 0..n {
                    let api = a.get(p, i);
                    let aqi = a.get(q, i);
                    a.set(p, i, c * api - s * aqi);
                    a.set(q, i, s * api + c * aqi);
                }
            }
        }
    }
    (0..n).map(|i| a.get(i, i)).fold(f64::INFINITY, f64::min)
}

/// The block matrix `(M Gᵀ; G 0)` whose nonsingularity the index-3
/// formulation rests on.
pub fn saddle_matrix(m0: &DenseMatrix, g0: &DenseMatrix) -> DenseMatrix {
    let n = m0.rows;
    assert_eq!(n, m0.cols, "mass matrix must be square");
    assert_eq!(g0.cols, n, "constraint Jacobian width must match");
    let nl = g0.rows;
    let mut s = DenseMatrix::zeros(n + nl, n + nl);
    for i in 0..n {
        for j in 0..n {
            s.set(i, j, m0.get(i, j));
        }
    }
    for i in 0..nl {
        for j in 0..n {
            s.set(n + i, j, g0.get(i, j));
            s.set(j, n + i, g0.get(i, j));
        }
    }
    s
}

/// Forms and factors the Schur complement G·M⁻¹·Gᵀ, the constant matrix of
/// every order's multiplier equation. Checks G for full row rank first.
pub fn schur_complement(
    mass: &Factorization,
    g: &DenseMatrix,
) -> Result<(DenseMatrix, Factorization), LinalgError> {
    assert_eq!(g.cols, mass.n, "constraint Jacobian width must match");
    let rank = numerical_rank(g, RANK_REL_TOL);
    if rank < g.rows {
        return Err(LinalgError::RankDeficient {
            rank,
            needed: g.rows,
        });
    }
    let minv_gt = mass.solve_mat(&g.transpose());
    let s = g.matmul(&minv_gt);
    let f = lu_factor(&s).map_err(|_| LinalgError::SingularSchur)?;
    if f.near_singular() {
        return Err(LinalgError::SingularSchur);
    }
    Ok((s, f))
}

/// Findings of the structural checks at the expansion point. `pass`
/// requires all four: full constraint rank, positive definiteness of the
/// mass matrix on the constraint kernel, an invertible mass matrix, and a
/// nonsingular saddle matrix.
#[derive(Debug, Clone)]
pub struct DiagnosticsReport {
    pub n_lambda: usize,
    pub g_rank: usize,
    pub full_rank: bool,
    /// Smallest eigenvalue of Zᵀ M Z over an orthonormal kernel basis Z.
    /// `None` when the kernel is trivial or the rank check already failed.
    pub kernel_min_eigenvalue: Option<f64>,
    pub definite_on_kernel: bool,
    pub mass_rcond: f64,
    pub mass_invertible: bool,
    pub saddle_rcond: f64,
    pub saddle_nonsingular: bool,
}

impl DiagnosticsReport {
    pub fn pass(&self) -> bool {
        self.full_rank && self.definite_on_kernel && self.mass_invertible && self.saddle_nonsingular
    }
}

impl fmt::Display for DiagnosticsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "constraint rank: {}/{} ({})",
            self.g_rank,
            self.n_lambda,
            if self.full_rank { "full" } else { "DEFICIENT" }
        )?;
        match self.kernel_min_eigenvalue {
            Some(ev) => writeln!(
                f,
                "mass on constraint kernel: min eigenvalue {ev:.6e} ({})",
                if self.definite_on_kernel {
                    "positive definite"
                } else {
                    "NOT positive definite"
                }
            )?,
            None => writeln!(
                f,
                "mass on constraint kernel: {}",
                if self.definite_on_kernel {
                    "trivial kernel, nothing to check"
                } else {
                    "not evaluated (rank check failed)"
                }
            )?,
        }
        writeln!(
            f,
            "mass matrix: rcond {:.3e} ({})",
            self.mass_rcond,
            if self.mass_invertible {
                "invertible"
            } else {
                "SINGULAR"
            }
        )?;
        write!(
            f,
            "saddle matrix: rcond {:.3e} ({})",
            self.saddle_rcond,
            if self.saddle_nonsingular {
                "nonsingular"
            } else {
                "SINGULAR"
            }
        )
    }
}

/// Runs the structural checks on the mass matrix and constraint Jacobian
/// at the expansion point. Never errors: failures are findings.
pub fn diagnostics(m0: &DenseMatrix, g0: &DenseMatrix) -> DiagnosticsReport {
    let n = m0.rows;
    assert_eq!(n, m0.cols, "mass matrix must be square");
    assert_eq!(g0.cols, n, "constraint Jacobian width must match");

    let g_rank = numerical_rank(g0, RANK_REL_TOL);
    let full_rank = g_rank == g0.rows;

    let (kernel_min_eigenvalue, definite_on_kernel) = if full_rank {
        let z = kernel_basis(g0);
        if z.cols == 0 {
            (None, true)
        } else {
            let zmz = z.transpose().matmul(m0).matmul(&z);
            let ev = jacobi_min_eigenvalue(zmz);
            (Some(ev), ev > 0.0)
        }
    } else {
        (None, false)
    };

    let (mass_rcond, mass_invertible) = match lu_factor(m0) {
        Ok(f) => (f.rcond(), !f.near_singular()),
        Err(_) => (0.0, false),
    };
    let (saddle_rcond, saddle_nonsingular) = match lu_factor(&saddle_matrix(m0, g0)) {
        Ok(f) => (f.rcond(), !f.near_singular()),
        Err(_) => (0.0, false),
    };

    DiagnosticsReport {
        n_lambda: g0.rows,
        g_rank,
        full_rank,
        kernel_min_eigenvalue,
        definite_on_kernel,
        mass_rcond,
        mass_invertible,
        saddle_rcond,
        saddle_nonsingular,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn robot_mass() -> DenseMatrix {
        DenseMatrix::from_rows(vec![vec![8.0, 2.5], vec![2.5, 1.0]]).unwrap()
    }

    fn robot_jacobian() -> DenseMatrix {
        DenseMatrix::from_rows(vec![vec![2.0, 1.0]]).unwrap()
    }

    #[test]
    fn mass_matrix_inverse_at_the_expansion_point() {
        let f = lu_factor(&robot_mass()).unwrap();
        let inv = f.solve_mat(&DenseMatrix::identity(2));
        let want = [[4.0 / 7.0, -10.0 / 7.0], [-10.0 / 7.0, 32.0 / 7.0]];
        for (i, row) in want.iter().enumerate() {
            for (j, &w) in row.iter().enumerate() {
                assert_relative_eq!(inv.get(i, j), w, epsilon = 1e-14);
            }
        }
        assert!(!f.near_singular());
    }

    #[test]
    fn identity_solves_are_trivial() {
        let f = lu_factor(&DenseMatrix::identity(3)).unwrap();
        let b = [3.0, -1.0, 0.5];
        assert_eq!(f.solve_vec(&b), b.to_vec());
    }

    #[test]
    fn rank_one_matrix_is_singular() {
        let a = DenseMatrix::from_rows(vec![vec![1.0, 1.0], vec![1.0, 1.0]]).unwrap();
        assert_eq!(
            lu_factor(&a).unwrap_err(),
            LinalgError::Singular { column: 1 }
        );
    }

    #[test]
    fn nonfinite_entries_are_rejected() {
        assert_eq!(
            DenseMatrix::new(1, 2, vec![1.0, f64::NAN]).unwrap_err(),
            LinalgError::NonFinite
        );
    }

    #[test]
    fn acceleration_solves_of_the_first_two_orders() {
        // The order-0 and order-1 right-hand sides of the worked system:
        // f⁽⁰⁾ − Gᵀλ⁽⁰⁾ = 0 gives a zero acceleration, and the order-1
        // data (−3, −1/2) maps to (−1, 2).
        let f = lu_factor(&robot_mass()).unwrap();
        assert_eq!(f.solve_vec(&[0.0, 0.0]), vec![0.0, 0.0]);
        let z1 = f.solve_vec(&[-3.0, -0.5]);
        assert_relative_eq!(z1[0], -1.0, epsilon = 1e-14);
        assert_relative_eq!(z1[1], 2.0, epsilon = 1e-14);
    }

    #[test]
    fn schur_complement_examples() {
        let f = lu_factor(&robot_mass()).unwrap();
        let (s, _) = schur_complement(&f, &robot_jacobian()).unwrap();
        assert_eq!(s.rows(), 1);
        assert_relative_eq!(s.get(0, 0), 8.0 / 7.0, epsilon = 1e-14);

        let id = lu_factor(&DenseMatrix::identity(3)).unwrap();
        let (s_id, _) = schur_complement(&id, &DenseMatrix::identity(3)).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert_relative_eq!(s_id.get(i, j), if i == j { 1.0 } else { 0.0 });
            }
        }

        let m = DenseMatrix::from_rows(vec![vec![4.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let g = DenseMatrix::from_rows(vec![vec![1.0, 0.0]]).unwrap();
        let (s2, _) = schur_complement(&lu_factor(&m).unwrap(), &g).unwrap();
        assert_relative_eq!(s2.get(0, 0), 0.25, epsilon = 1e-15);
    }

    #[test]
    fn schur_complement_rejects_dependent_constraints() {
        let f = lu_factor(&DenseMatrix::identity(2)).unwrap();
        let g = DenseMatrix::from_rows(vec![vec![1.0, 1.0], vec![2.0, 2.0]]).unwrap();
        assert_eq!(
            schur_complement(&f, &g).unwrap_err(),
            LinalgError::RankDeficient { rank: 1, needed: 2 }
        );
    }

    #[test]
    fn diagnostics_pass_on_the_worked_system() {
        let rep = diagnostics(&robot_mass(), &robot_jacobian());
        assert_eq!(rep.g_rank, 1);
        assert_eq!(rep.n_lambda, 1);
        assert!(rep.full_rank);
        // Kernel of (2, 1) is spanned by (1, −2)/√5; zᵀMz = 2/5 there.
        assert_relative_eq!(rep.kernel_min_eigenvalue.unwrap(), 0.4, epsilon = 1e-12);
        assert!(rep.definite_on_kernel);
        assert!(rep.mass_invertible);
        assert!(rep.saddle_nonsingular);
        assert!(rep.pass());
    }

    #[test]
    fn diagnostics_flag_a_zero_constraint_row() {
        let rep = diagnostics(&robot_mass(), &DenseMatrix::zeros(1, 2));
        assert_eq!(rep.g_rank, 0);
        assert!(!rep.full_rank);
        assert!(!rep.pass());
    }

    #[test]
    fn diagnostics_flag_indefiniteness_on_the_kernel() {
        let m = DenseMatrix::from_rows(vec![vec![1.0, 0.0], vec![0.0, -1.0]]).unwrap();
        let g = DenseMatrix::from_rows(vec![vec![1.0, 0.0]]).unwrap();
        let rep = diagnostics(&m, &g);
        assert!(rep.full_rank);
        assert_relative_eq!(rep.kernel_min_eigenvalue.unwrap(), -1.0, epsilon = 1e-12);
        assert!(!rep.definite_on_kernel);
        assert!(!rep.pass());
    }

    #[test]
    fn near_singularity_is_flagged_without_error() {
        let a = DenseMatrix::from_rows(vec![vec![1.0, 1.0], vec![1.0, 1.0 + 1e-14]]).unwrap();
        let f = lu_factor(&a).unwrap();
        assert!(f.near_singular());
    }

    #[test]
    fn rank_of_wide_and_degenerate_shapes() {
        let g = DenseMatrix::from_rows(vec![vec![1.0, 2.0, 3.0], vec![2.0, 4.0, 6.0]]).unwrap();
        assert_eq!(numerical_rank(&g, RANK_REL_TOL), 1);
        let full = DenseMatrix::from_rows(vec![vec![1.0, 0.0, 1.0], vec![0.0, 1.0, -1.0]]).unwrap();
        assert_eq!(numerical_rank(&full, RANK_REL_TOL), 2);
        assert_eq!(numerical_rank(&DenseMatrix::zeros(2, 3), RANK_REL_TOL), 0);
    }

    #[test]
    fn polynomial_solve_reproduces_the_order_one_acceleration() {
        // Right-hand side (−3t, −t/2) against the mass matrix gives
        // (−t, 2t): the degree-1 coefficient of the solve above carried
        // through a polynomial right-hand side.
        let f = lu_factor(&robot_mass()).unwrap();
        let rhs = vec![
            TimePoly::monomial(1, -3.0, 6),
            TimePoly::monomial(1, -0.5, 6),
        ];
        let z = f.solve_polys(&rhs);
        assert_relative_eq!(z[0].coeff(1), -1.0, epsilon = 1e-14);
        assert_relative_eq!(z[1].coeff(1), 2.0, epsilon = 1e-14);
        assert_eq!(z[0].coeff(0), 0.0);
        assert!(z[0].degree() == Some(1) && z[1].degree() == Some(1));
    }

    // Random matrix with unit-ish entries made safely invertible by
    // diagonal dominance.
    fn dominant_matrix(n: usize) -> impl Strategy<Value = DenseMatrix> {
        proptest::collection::vec(-1.0..1.0f64, n * n).prop_map(move |mut data| {
            for i in 0..n {
                data[i * n + i] += 2.0 * n as f64;
            }
            DenseMatrix::new(n, n, data).unwrap()
        })
    }

    proptest! {
        #[test]
        fn factors_reconstruct_the_permuted_matrix(
            n in 1usize..=6,
            seed in proptest::collection::vec(-1.0..1.0f64, 36),
        ) {
            let mut data = seed[..n * n].to_vec();
            for i in 0..n {
                data[i * n + i] += 2.0 * n as f64;
            }
            let a = DenseMatrix::new(n, n, data).unwrap();
            let f = lu_factor(&a).unwrap();

            let mut l = DenseMatrix::identity(n);
            let mut u = DenseMatrix::zeros(n, n);
            for i in 0..n {
                for j in 0..n {
                    if j < i {
                        l.set(i, j, f.lu[i * n + j]);
                    } else {
                        u.set(i, j, f.lu[i * n + j]);
                    }
                }
            }
            let mut pa = DenseMatrix::zeros(n, n);
            for i in 0..n {
                for j in 0..n {
                    pa.set(i, j, a.get(f.piv[i], j));
                }
            }
            let lu = l.matmul(&u);
            let mut err = 0.0f64;
            for i in 0..n {
                for j in 0..n {
                    err += (lu.get(i, j) - pa.get(i, j)).powi(2);
                }
            }
            prop_assert!(err.sqrt() <= 1e-12 * a.norm_fro());
        }

        #[test]
        fn solve_meets_the_residual_contract(
            a in dominant_matrix(4),
            b in proptest::collection::vec(-10.0..10.0f64, 4),
        ) {
            let f = lu_factor(&a).unwrap();
            let x = f.solve_vec(&b);
            let ax = a.matvec(&x);
            let xn: f64 = x.iter().map(|v| v.abs()).sum();
            let bn: f64 = b.iter().map(|v| v.abs()).sum();
            for i in 0..4 {
                prop_assert!((ax[i] - b[i]).abs() <= 1e-10 * (a.norm_one() * xn + bn));
            }
        }

        #[test]
        fn polynomial_solves_commute_with_coefficient_extraction(
            a in dominant_matrix(3),
            coeffs in proptest::collection::vec(-5.0..5.0f64, 15),
        ) {
            let cap = 6;
            let rhs: Vec<TimePoly> = (0..3)
                .map(|i| TimePoly::from_coeffs(coeffs[i * 5..(i + 1) * 5].to_vec(), cap))
                .collect();
            let f = lu_factor(&a).unwrap();
            let x = f.solve_polys(&rhs);

            for k in 0..=cap {
                // Bitwise in the representation the solve works in…
                let bk: Vec<f64> = rhs.iter().map(|p| p.deriv(k)).collect();
                let xk = if bk.iter().all(|v| *v == 0.0) {
                    vec![0.0; 3]
                } else {
                    f.solve_vec(&bk)
                };
                for i in 0..3 {
                    prop_assert_eq!(x[i].deriv(k).to_bits(), xk[i].to_bits());
                }
                // …and to rounding error in the power basis.
                let ck: Vec<f64> = rhs.iter().map(|p| p.coeff(k)).collect();
                let yk = f.solve_vec(&ck);
                for i in 0..3 {
                    prop_assert!(
                        (x[i].coeff(k) - yk[i]).abs() <= 1e-13 * (1.0 + yk[i].abs()),
                        "component {}, degree {}", i, k
                    );
                }
            }
        }

        #[test]
        fn block_elimination_agrees_with_the_direct_saddle_solve(
            np in 2usize..=6,
            m_seed in proptest::collection::vec(-1.0..1.0f64, 36),
            g_seed in proptest::collection::vec(-1.0..1.0f64, 18),
            r_seed in proptest::collection::vec(-2.0..2.0f64, 9),
        ) {
            let nl = 1 + np % 3;
            prop_assume!(nl <= np);

            let a = DenseMatrix::new(np, np, m_seed[..np * np].to_vec()).unwrap();
            let mut m = a.matmul(&a.transpose());
            for i in 0..np {
                m.set(i, i, m.get(i, i) + np as f64);
            }
            let g = DenseMatrix::new(nl, np, g_seed[..nl * np].to_vec()).unwrap();
            prop_assume!(numerical_rank(&g, RANK_REL_TOL) == nl);

            let rep = diagnostics(&m, &g);
            prop_assert!(rep.saddle_nonsingular);

            let r = &r_seed[..np];
            let s = &r_seed[np..np + nl.min(r_seed.len() - np)];
            prop_assume!(s.len() == nl);

            // Block elimination through the Schur complement…
            let fm = lu_factor(&m).unwrap();
            let (_, fs) = schur_complement(&fm, &g).unwrap();
            let minv_r = fm.solve_vec(r);
            let mut rhs_y: Vec<f64> = g.matvec(&minv_r);
            for i in 0..nl {
                rhs_y[i] -= s[i];
            }
            let y = fs.solve_vec(&rhs_y);
            let gt_y = g.transpose().matvec(&y);
            let p: Vec<f64> = fm
                .solve_vec(&r.iter().zip(&gt_y).map(|(ri, gi)| ri - gi).collect::<Vec<_>>());

            // …against one dense solve of the assembled system.
            let sad = lu_factor(&saddle_matrix(&m, &g)).unwrap();
            let mut stacked = r.to_vec();
            stacked.extend_from_slice(s);
            let direct = sad.solve_vec(&stacked);

            for i in 0..np {
                prop_assert!(
                    (p[i] - direct[i]).abs() <= 1e-9 * (1.0 + direct[i].abs()),
                    "position row {}", i
                );
            }
            for i in 0..nl {
                prop_assert!(
                    (y[i] - direct[np + i]).abs() <= 1e-9 * (1.0 + direct[np + i].abs()),
                    "multiplier row {}", i
                );
            }
        }
    }
}
