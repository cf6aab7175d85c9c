//! Dense complex linear algebra on small operators.
//!
//! Matrices are stored row-major. Multipartite indices are flattened
//! big-endian: the first subsystem of a [`HilbertLayout`] is the most
//! significant digit, so `|i_a⟩ ⊗ |i_b⟩` sits at `i_a * dim_b + i_b`.

use std::fmt;
use std::ops::{Add, Index, IndexMut, Mul, Sub};

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;

use crate::error::{LabError, Result};

pub type C64 = Complex64;

/// Eigenvalues within this distance of zero are treated as zero.
pub const DEFAULT_PSD_TOL: f64 = 1e-10;

/// Maximum Gram deviation accepted by [`unitary_completion`].
pub const GRAM_MATCH_TOL: f64 = 1e-9;

/// Candidates whose residual norm falls below this are skipped during basis completion.
pub const COMPLETION_SKIP_TOL: f64 = 1e-9;

const HERMITIAN_TOL: f64 = 1e-9;

pub const ZERO: C64 = C64::new(0.0, 0.0);
pub const ONE: C64 = C64::new(1.0, 0.0);

#[derive(Debug, Clone, PartialEq)]
pub struct ComplexMatrix {
    rows: usize,
    cols: usize,
    data: Vec<C64>,
}

impl ComplexMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![ZERO; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = ONE;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<C64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(LabError::DimensionMismatch {
                expected: rows * cols,
                found: data.len(),
            });
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix from real entries given row by row.
    ///
    /// Panics if the rows are ragged; intended for literals.
    pub fn from_real_rows(rows: &[&[f64]]) -> Self {
        let n = rows.len();
        let m = rows.first().map_or(0, |r| r.len());
        assert!(rows.iter().all(|r| r.len() == m), "ragged rows");
        let data = rows.iter().flat_map(|r| r.iter().map(|&x| C64::new(x, 0.0))).collect();
        Self { rows: n, cols: m, data }
    }

    pub fn diagonal(entries: &[C64]) -> Self {
        let mut m = Self::zeros(entries.len(), entries.len());
        for (i, &z) in entries.iter().enumerate() {
            m[(i, i)] = z;
        }
        m
    }

    /// Column vector with the given entries.
    pub fn column(v: &[C64]) -> Self {
        Self {
            rows: v.len(),
            cols: 1,
            data: v.to_vec(),
        }
    }

    /// `|a⟩⟨b|`.
    pub fn outer(a: &[C64], b: &[C64]) -> Self {
        let mut m = Self::zeros(a.len(), b.len());
        for (i, ai) in a.iter().enumerate() {
            for (j, bj) in b.iter().enumerate() {
                m[(i, j)] = ai * bj.conj();
            }
        }
        m
    }

    /// Square matrix whose columns are the given vectors.
    pub fn from_columns(columns: &[Vec<C64>]) -> Result<Self> {
        let rows = columns.first().map_or(0, Vec::len);
        let mut m = Self::zeros(rows, columns.len());
        for (j, col) in columns.iter().enumerate() {
            if col.len() != rows {
                return Err(LabError::DimensionMismatch {
                    expected: rows,
                    found: col.len(),
                });
            }
            for (i, &z) in col.iter().enumerate() {
                m[(i, j)] = z;
            }
        }
        Ok(m)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn as_slice(&self) -> &[C64] {
        &self.data
    }

    pub fn column_vec(&self, j: usize) -> Vec<C64> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn adjoint(&self) -> Self {
        let mut m = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                m[(j, i)] = self[(i, j)].conj();
            }
        }
        m
    }

    pub fn scale(&self, z: C64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|x| x * z).collect(),
        }
    }

    pub fn trace(&self) -> C64 {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).sum()
    }

    pub fn mul_vec(&self, v: &[C64]) -> Vec<C64> {
        assert_eq!(v.len(), self.cols, "matrix-vector shape mismatch");
        self.data
            .chunks_exact(self.cols.max(1))
            .take(self.rows)
            .map(|row| row.iter().zip(v).map(|(a, b)| a * b).sum())
            .collect()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    /// Largest entrywise modulus of `self - other`; infinite on shape mismatch.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        if self.rows != other.rows || self.cols != other.cols {
            return f64::INFINITY;
        }
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }

    pub fn hermitian_deviation(&self) -> f64 {
        if !self.is_square() {
            return f64::INFINITY;
        }
        let mut dev: f64 = 0.0;
        for i in 0..self.rows {
            for j in i..self.cols {
                dev = dev.max((self[(i, j)] - self[(j, i)].conj()).norm());
            }
        }
        dev
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        self.hermitian_deviation() <= tol
    }

    pub fn is_unitary(&self, tol: f64) -> bool {
        self.is_square() && unitarity_deviation(self) <= tol
    }

    pub fn is_psd(&self, tol: f64) -> bool {
        self.is_hermitian(tol) && min_eig_hermitian(self).is_ok_and(|m| m >= -tol)
    }

    /// `(A + A†) / 2`.
    pub fn hermitian_part(&self) -> Self {
        let adj = self.adjoint();
        let mut m = self.clone();
        for (x, y) in m.data.iter_mut().zip(&adj.data) {
            *x = (*x + y) * 0.5;
        }
        m
    }

    /// Inverse of a square matrix; `Singular` when LU finds no pivot.
    pub fn inverse(&self) -> Result<Self> {
        if !self.is_square() {
            return Err(LabError::DimensionMismatch {
                expected: self.rows,
                found: self.cols,
            });
        }
        self.to_nalgebra()
            .try_inverse()
            .map(|m| Self::from_nalgebra(&m))
            .ok_or(LabError::Singular)
    }

    fn to_nalgebra(&self) -> DMatrix<C64> {
        DMatrix::from_row_slice(self.rows, self.cols, &self.data)
    }

    fn from_nalgebra(m: &DMatrix<C64>) -> Self {
        let mut out = Self::zeros(m.nrows(), m.ncols());
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                out[(i, j)] = m[(i, j)];
            }
        }
        out
    }
}

impl Index<(usize, usize)> for ComplexMatrix {
    type Output = C64;

    fn index(&self, (i, j): (usize, usize)) -> &C64 {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for ComplexMatrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut C64 {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

impl Mul for &ComplexMatrix {
    type Output = ComplexMatrix;

    fn mul(self, rhs: &ComplexMatrix) -> ComplexMatrix {
        assert_eq!(self.cols, rhs.rows, "matrix product shape mismatch");
        let mut out = ComplexMatrix::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == ZERO {
                    continue;
                }
                let row = &rhs.data[k * rhs.cols..(k + 1) * rhs.cols];
                let dst = &mut out.data[i * rhs.cols..(i + 1) * rhs.cols];
                for (d, b) in dst.iter_mut().zip(row) {
                    *d += a * b;
                }
            }
        }
        out
    }
}

impl Add for &ComplexMatrix {
    type Output = ComplexMatrix;

    fn add(self, rhs: &ComplexMatrix) -> ComplexMatrix {
        assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols));
        ComplexMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&rhs.data).map(|(a, b)| a + b).collect(),
        }
    }
}

impl Sub for &ComplexMatrix {
    type Output = ComplexMatrix;

    fn sub(self, rhs: &ComplexMatrix) -> ComplexMatrix {
        assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols));
        ComplexMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&rhs.data).map(|(a, b)| a - b).collect(),
        }
    }
}

impl fmt::Display for ComplexMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for i in 0..self.rows {
            let row: Vec<String> = (0..self.cols)
                .map(|j| {
                    let z = self[(i, j)];
                    format!("{:+.6}{:+.6}i", z.re, z.im)
                })
                .collect();
            writeln!(f, "[{}]", row.join(", "))?;
        }
        Ok(())
    }
}

/// `‖U†U − I‖_max`.
pub fn unitarity_deviation(u: &ComplexMatrix) -> f64 {
    (&u.adjoint() * u).max_abs_diff(&ComplexMatrix::identity(u.cols()))
}

/// Kronecker product `a ⊗ b`.
pub fn tensor(a: &ComplexMatrix, b: &ComplexMatrix) -> ComplexMatrix {
    let rows = a.rows * b.rows;
    let cols = a.cols * b.cols;
    let mut out = ComplexMatrix::zeros(rows, cols);
    for ia in 0..a.rows {
        for ja in 0..a.cols {
            let x = a[(ia, ja)];
            if x == ZERO {
                continue;
            }
            for ib in 0..b.rows {
                for jb in 0..b.cols {
                    out[(ia * b.rows + ib, ja * b.cols + jb)] = x * b[(ib, jb)];
                }
            }
        }
    }
    out
}

/// Kronecker product of two amplitude vectors.
pub fn tensor_vec(a: &[C64], b: &[C64]) -> Vec<C64> {
    a.iter().flat_map(|x| b.iter().map(move |y| x * y)).collect()
}

/// `⟨a|b⟩`, conjugate-linear in the first argument.
pub fn inner(a: &[C64], b: &[C64]) -> C64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

pub fn norm(v: &[C64]) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

pub fn max_abs_diff(a: &[C64], b: &[C64]) -> f64 {
    if a.len() != b.len() {
        return f64::INFINITY;
    }
    a.iter().zip(b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
}

/// One named tensor factor of a [`HilbertLayout`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Subsystem {
    pub label: String,
    pub dim: usize,
}

/// Ordered tensor factorization of a Hilbert space.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HilbertLayout {
    subsystems: Vec<Subsystem>,
}

impl HilbertLayout {
    pub fn new<S: Into<String>>(subsystems: impl IntoIterator<Item = (S, usize)>) -> Result<Self> {
        let mut out: Vec<Subsystem> = Vec::new();
        for (label, dim) in subsystems {
            let label = label.into();
            if dim == 0 {
                return Err(LabError::InvalidDimension { label, dim });
            }
            if out.iter().any(|s| s.label == label) {
                return Err(LabError::DuplicateLabel(label));
            }
            out.push(Subsystem { label, dim });
        }
        Ok(Self { subsystems: out })
    }

    /// A single unlabeled-looking system called `label`.
    pub fn single(label: &str, dim: usize) -> Result<Self> {
        Self::new([(label, dim)])
    }

    pub fn subsystems(&self) -> &[Subsystem] {
        &self.subsystems
    }

    pub fn len(&self) -> usize {
        self.subsystems.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subsystems.is_empty()
    }

    pub fn total_dim(&self) -> usize {
        self.subsystems.iter().map(|s| s.dim).product()
    }

    pub fn dims(&self) -> Vec<usize> {
        self.subsystems.iter().map(|s| s.dim).collect()
    }

    pub fn labels(&self) -> Vec<&str> {
        self.subsystems.iter().map(|s| s.label.as_str()).collect()
    }

    pub fn position(&self, label: &str) -> Result<usize> {
        self.subsystems
            .iter()
            .position(|s| s.label == label)
            .ok_or_else(|| LabError::UnknownLabel(label.to_string()))
    }

    pub fn positions(&self, labels: &[&str]) -> Result<Vec<usize>> {
        let mut out = Vec::with_capacity(labels.len());
        for l in labels {
            let p = self.position(l)?;
            if out.contains(&p) {
                return Err(LabError::DuplicateLabel(l.to_string()));
            }
            out.push(p);
        }
        Ok(out)
    }

    pub fn dim_of(&self, label: &str) -> Result<usize> {
        Ok(self.subsystems[self.position(label)?].dim)
    }

    /// Positions not in `positions`, ascending.
    pub fn complement(&self, positions: &[usize]) -> Vec<usize> {
        (0..self.len()).filter(|p| !positions.contains(p)).collect()
    }

    /// Layout made of the given positions, in the given order.
    pub fn restrict(&self, positions: &[usize]) -> Self {
        Self {
            subsystems: positions.iter().map(|&p| self.subsystems[p].clone()).collect(),
        }
    }

    /// `self ⊗ other`; labels must stay unique.
    pub fn concat(&self, other: &Self) -> Result<Self> {
        Self::new(
            self.subsystems
                .iter()
                .chain(&other.subsystems)
                .map(|s| (s.label.clone(), s.dim)),
        )
    }

    fn strides(&self) -> Vec<usize> {
        let mut strides = vec![1; self.len()];
        for p in (0..self.len().saturating_sub(1)).rev() {
            strides[p] = strides[p + 1] * self.subsystems[p + 1].dim;
        }
        strides
    }

    /// Flat offsets contributed by every joint index of the subsystems at
    /// `positions`, enumerated big-endian in the order given.
    pub fn offsets(&self, positions: &[usize]) -> Vec<usize> {
        let strides = self.strides();
        let mut offsets = vec![0usize];
        for &p in positions {
            let dim = self.subsystems[p].dim;
            let stride = strides[p];
            offsets = offsets
                .iter()
                .flat_map(|&base| (0..dim).map(move |k| base + k * stride))
                .collect();
        }
        offsets
    }
}

impl fmt::Display for HilbertLayout {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self
            .subsystems
            .iter()
            .map(|s| format!("{}:{}", s.label, s.dim))
            .collect();
        write!(f, "[{}]", parts.join(" ⊗ "))
    }
}

/// Reduced operator on the subsystems named in `keep`, ordered as in `layout`.
pub fn partial_trace(rho: &ComplexMatrix, layout: &HilbertLayout, keep: &[&str]) -> Result<ComplexMatrix> {
    let n = layout.total_dim();
    if !rho.is_square() || rho.rows() != n {
        return Err(LabError::DimensionMismatch {
            expected: n,
            found: rho.rows(),
        });
    }
    let mut kept = layout.positions(keep)?;
    kept.sort_unstable();
    let traced = layout.complement(&kept);
    let kept_off = layout.offsets(&kept);
    let traced_off = layout.offsets(&traced);

    let mut out = ComplexMatrix::zeros(kept_off.len(), kept_off.len());
    for (i, &ki) in kept_off.iter().enumerate() {
        for (j, &kj) in kept_off.iter().enumerate() {
            out[(i, j)] = traced_off.iter().map(|&t| rho[(ki + t, kj + t)]).sum();
        }
    }
    Ok(out)
}

/// Partial trace of `|ψ⟩⟨ψ|` computed without forming the full projector.
pub fn partial_trace_pure(amplitudes: &[C64], layout: &HilbertLayout, keep: &[&str]) -> Result<ComplexMatrix> {
    let n = layout.total_dim();
    if amplitudes.len() != n {
        return Err(LabError::DimensionMismatch {
            expected: n,
            found: amplitudes.len(),
        });
    }
    let mut kept = layout.positions(keep)?;
    kept.sort_unstable();
    let traced = layout.complement(&kept);
    let kept_off = layout.offsets(&kept);
    let traced_off = layout.offsets(&traced);

    let mut out = ComplexMatrix::zeros(kept_off.len(), kept_off.len());
    for (i, &ki) in kept_off.iter().enumerate() {
        for (j, &kj) in kept_off.iter().enumerate().skip(i) {
            let z: C64 = traced_off
                .iter()
                .map(|&t| amplitudes[ki + t] * amplitudes[kj + t].conj())
                .sum();
            out[(i, j)] = z;
            out[(j, i)] = z.conj();
        }
    }
    Ok(out)
}

/// Applies `op` to the subsystems at `positions` (in that order) of a vector on `layout`.
pub fn apply_local(
    op: &ComplexMatrix,
    amplitudes: &[C64],
    layout: &HilbertLayout,
    positions: &[usize],
) -> Result<Vec<C64>> {
    let n = layout.total_dim();
    if amplitudes.len() != n {
        return Err(LabError::DimensionMismatch {
            expected: n,
            found: amplitudes.len(),
        });
    }
    let op_off = layout.offsets(positions);
    if !op.is_square() || op.rows() != op_off.len() {
        return Err(LabError::DimensionMismatch {
            expected: op_off.len(),
            found: op.rows(),
        });
    }
    let rest_off = layout.offsets(&layout.complement(positions));
    let mut out = vec![ZERO; n];
    let mut local = vec![ZERO; op_off.len()];
    for &base in &rest_off {
        for (slot, &o) in local.iter_mut().zip(&op_off) {
            *slot = amplitudes[base + o];
        }
        for (r, &o) in op_off.iter().enumerate() {
            out[base + o] = (0..op_off.len()).map(|c| op[(r, c)] * local[c]).sum();
        }
    }
    Ok(out)
}

/// Matrix of pairwise inner products `G_ij = ⟨v_i|v_j⟩`.
pub fn gram_matrix<V: AsRef<[C64]>>(vectors: &[V]) -> Result<ComplexMatrix> {
    let k = vectors.len();
    if let Some(first) = vectors.first() {
        let n = first.as_ref().len();
        if let Some(bad) = vectors.iter().find(|v| v.as_ref().len() != n) {
            return Err(LabError::DimensionMismatch {
                expected: n,
                found: bad.as_ref().len(),
            });
        }
    }
    let mut g = ComplexMatrix::zeros(k, k);
    for i in 0..k {
        for j in i..k {
            let z = inner(vectors[i].as_ref(), vectors[j].as_ref());
            g[(i, j)] = z;
            g[(j, i)] = z.conj();
        }
    }
    Ok(g)
}

/// Spectral decomposition of a Hermitian matrix, eigenvalues ascending.
#[derive(Debug, Clone)]
pub struct HermitianEigen {
    pub values: Vec<f64>,
    /// Eigenvectors as columns, in the order of `values`.
    pub vectors: ComplexMatrix,
}

pub fn hermitian_eigen(h: &ComplexMatrix) -> Result<HermitianEigen> {
    if !h.is_square() {
        return Err(LabError::DimensionMismatch {
            expected: h.rows(),
            found: h.cols(),
        });
    }
    let deviation = h.hermitian_deviation();
    if deviation > HERMITIAN_TOL * h.max_abs().max(1.0) {
        return Err(LabError::NotHermitian { deviation });
    }
    let n = h.rows();
    if n == 0 {
        return Ok(HermitianEigen {
            values: Vec::new(),
            vectors: ComplexMatrix::zeros(0, 0),
        });
    }
    let eig = SymmetricEigen::new(h.hermitian_part().to_nalgebra());
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let vecs = ComplexMatrix::from_nalgebra(&eig.eigenvectors);
    let mut vectors = ComplexMatrix::zeros(n, n);
    for (new_j, &old_j) in order.iter().enumerate() {
        for i in 0..n {
            vectors[(i, new_j)] = vecs[(i, old_j)];
        }
    }
    Ok(HermitianEigen {
        values: order.iter().map(|&j| eig.eigenvalues[j]).collect(),
        vectors,
    })
}

pub fn eigenvalues_hermitian(h: &ComplexMatrix) -> Result<Vec<f64>> {
    Ok(hermitian_eigen(h)?.values)
}

/// Smallest eigenvalue of a Hermitian matrix (`+∞` for the empty matrix).
pub fn min_eig_hermitian(h: &ComplexMatrix) -> Result<f64> {
    Ok(eigenvalues_hermitian(h)?.first().copied().unwrap_or(f64::INFINITY))
}

/// Number of eigenvalues of a PSD matrix above `tol`.
pub fn numerical_rank(h: &ComplexMatrix, tol: f64) -> Result<usize> {
    Ok(eigenvalues_hermitian(h)?.into_iter().filter(|&l| l > tol).count())
}

/// Factors a PSD matrix as a Gram matrix: returns `f_i` with `⟨f_i|f_j⟩ = b_ij`.
///
/// Eigenvalues with modulus at most `tol` are clipped to zero, so the factor
/// rank equals the numerical rank of `b`.
pub fn psd_factor(b: &ComplexMatrix, tol: f64) -> Result<Vec<Vec<C64>>> {
    let eig = hermitian_eigen(b)?;
    if let Some(&min) = eig.values.first() {
        if min < -tol {
            return Err(LabError::Indefinite { min_eigenvalue: min });
        }
    }
    let n = b.rows();
    let roots: Vec<f64> = eig
        .values
        .iter()
        .map(|&l| if l <= tol { 0.0 } else { l.sqrt() })
        .collect();
    Ok((0..n)
        .map(|i| (0..n).map(|k| eig.vectors[(i, k)].conj() * roots[k]).collect())
        .collect())
}

/// Thin singular value decomposition `m = U·diag(s)·V†`, singular values descending.
#[derive(Debug, Clone)]
pub struct Svd {
    /// Left singular vectors as columns (`rows × r`).
    pub u: ComplexMatrix,
    pub singular_values: Vec<f64>,
    /// Right singular vectors as columns (`cols × r`).
    pub v: ComplexMatrix,
}

pub fn svd(m: &ComplexMatrix) -> Svd {
    let r = m.rows().min(m.cols());
    if r == 0 {
        return Svd {
            u: ComplexMatrix::zeros(m.rows(), 0),
            singular_values: Vec::new(),
            v: ComplexMatrix::zeros(m.cols(), 0),
        };
    }
    let dec = m.to_nalgebra().svd(true, true);
    let u = ComplexMatrix::from_nalgebra(dec.u.as_ref().expect("requested U"));
    let v = ComplexMatrix::from_nalgebra(&dec.v_t.as_ref().expect("requested V^T").adjoint());
    let mut order: Vec<usize> = (0..r).collect();
    order.sort_by(|&a, &b| dec.singular_values[b].total_cmp(&dec.singular_values[a]));
    let mut su = ComplexMatrix::zeros(m.rows(), r);
    let mut sv = ComplexMatrix::zeros(m.cols(), r);
    for (new_j, &old_j) in order.iter().enumerate() {
        for i in 0..m.rows() {
            su[(i, new_j)] = u[(i, old_j)];
        }
        for i in 0..m.cols() {
            sv[(i, new_j)] = v[(i, old_j)];
        }
    }
    Svd {
        u: su,
        singular_values: order.iter().map(|&j| dec.singular_values[j]).collect(),
        v: sv,
    }
}

fn project_out(w: &mut [C64], basis: &[Vec<C64>]) -> Vec<C64> {
    let mut coeffs = vec![ZERO; basis.len()];
    // Two passes of modified Gram-Schmidt keep orthogonality at roundoff level.
    for _ in 0..2 {
        for (l, e) in basis.iter().enumerate() {
            let c = inner(e, w);
            coeffs[l] += c;
            for (x, y) in w.iter_mut().zip(e) {
                *x -= c * y;
            }
        }
    }
    coeffs
}

fn scale_in_place(w: &mut [C64], s: f64) {
    for x in w.iter_mut() {
        *x *= s;
    }
}

/// Orthonormalizes `vectors` in order, skipping numerically dependent ones.
pub fn orthonormalize(vectors: &[Vec<C64>], skip_tol: f64) -> Vec<Vec<C64>> {
    let mut basis: Vec<Vec<C64>> = Vec::new();
    for v in vectors {
        let mut w = v.clone();
        project_out(&mut w, &basis);
        let n = norm(&w);
        if n > skip_tol {
            scale_in_place(&mut w, 1.0 / n);
            basis.push(w);
        }
    }
    basis
}

/// Extends an orthonormal list to a basis of `C^dim` with standard basis
/// vectors taken in index order.
pub fn complete_basis(mut basis: Vec<Vec<C64>>, dim: usize) -> Vec<Vec<C64>> {
    for j in 0..dim {
        if basis.len() >= dim {
            break;
        }
        let mut w = vec![ZERO; dim];
        w[j] = ONE;
        project_out(&mut w, &basis);
        let n = norm(&w);
        if n > COMPLETION_SKIP_TOL {
            scale_in_place(&mut w, 1.0 / n);
            basis.push(w);
        }
    }
    basis
}

/// Returns a unitary `U` on `C^dim` with `U·inputs[k] = outputs[k]`.
///
/// Both lists are orthonormalized in tandem (the output side reuses the
/// input-side Gram-Schmidt coefficients), then each orthonormal family is
/// completed to a full basis and `U` maps one basis onto the other.
pub fn unitary_completion<V: AsRef<[C64]>>(inputs: &[V], outputs: &[V], dim: usize) -> Result<ComplexMatrix> {
    if inputs.len() != outputs.len() {
        return Err(LabError::DimensionMismatch {
            expected: inputs.len(),
            found: outputs.len(),
        });
    }
    if inputs.len() > dim {
        return Err(LabError::DependentInputs);
    }
    for v in inputs.iter().chain(outputs) {
        if v.as_ref().len() != dim {
            return Err(LabError::DimensionMismatch {
                expected: dim,
                found: v.as_ref().len(),
            });
        }
    }
    let deviation = gram_matrix(inputs)?.max_abs_diff(&gram_matrix(outputs)?);
    if deviation > GRAM_MATCH_TOL {
        return Err(LabError::GramMismatch { deviation });
    }

    let mut e: Vec<Vec<C64>> = Vec::with_capacity(dim);
    let mut f: Vec<Vec<C64>> = Vec::with_capacity(dim);
    for (x, y) in inputs.iter().zip(outputs) {
        let mut w = x.as_ref().to_vec();
        let mut w_out = y.as_ref().to_vec();
        let coeffs = project_out(&mut w, &e);
        for (c, fl) in coeffs.iter().zip(&f) {
            for (a, b) in w_out.iter_mut().zip(fl) {
                *a -= c * b;
            }
        }
        let n = norm(&w);
        if n <= COMPLETION_SKIP_TOL * norm(x.as_ref()).max(1.0) {
            return Err(LabError::DependentInputs);
        }
        scale_in_place(&mut w, 1.0 / n);
        scale_in_place(&mut w_out, 1.0 / n);
        e.push(w);
        f.push(w_out);
    }

    // The output family is orthonormal only up to the Gram deviation; clean it up.
    let k = f.len();
    let f = orthonormalize(&f, COMPLETION_SKIP_TOL);
    if f.len() != k {
        return Err(LabError::GramMismatch { deviation });
    }

    let e = complete_basis(e, dim);
    let f = complete_basis(f, dim);
    let mut u = ComplexMatrix::zeros(dim, dim);
    for (ek, fk) in e.iter().zip(&f) {
        for i in 0..dim {
            if fk[i] == ZERO {
                continue;
            }
            for j in 0..dim {
                u[(i, j)] += fk[i] * ek[j].conj();
            }
        }
    }
    Ok(u)
}
