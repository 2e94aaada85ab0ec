//! Matrix storage: dense row-major, packed upper-triangular, and the
//! column-major update matrix.
//!
//! All three containers are plain buffers with shape metadata. They are
//! immutable values except where a kernel routine takes `&mut` access; no
//! interior mutability or synchronization anywhere.

use std::fmt;

use crate::scalar::Scalar;

/// Errors from matrix construction and shape validation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MatrixError {
    /// Buffer length does not match the declared shape.
    LengthMismatch {
        expected: usize,
        actual: usize,
    },
    /// A zero dimension where a positive one is required.
    EmptyDimension,
    /// Two operands that must agree in shape do not.
    DimensionMismatch {
        context: &'static str,
        left: usize,
        right: usize,
    },
}

impl fmt::Display for MatrixError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MatrixError::LengthMismatch { expected, actual } => {
                write!(f, "buffer length {actual} does not match shape (expected {expected})")
            }
            MatrixError::EmptyDimension => write!(f, "dimension must be at least 1"),
            MatrixError::DimensionMismatch { context, left, right } => {
                write!(f, "dimension mismatch in {context}: {left} vs {right}")
            }
        }
    }
}

impl std::error::Error for MatrixError {}

/// Dense rows×cols matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMat<T: Scalar> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> DenseMat<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        DenseMat { rows, cols, data: vec![T::zero(); rows * cols] }
    }

    pub fn from_data(rows: usize, cols: usize, data: Vec<T>) -> Result<Self, MatrixError> {
        if data.len() != rows * cols {
            return Err(MatrixError::LengthMismatch { expected: rows * cols, actual: data.len() });
        }
        Ok(DenseMat { rows, cols, data })
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = T::one();
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }
    pub fn cols(&self) -> usize {
        self.cols
    }
    pub fn data(&self) -> &[T] {
        &self.data
    }
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    /// Largest absolute entry (0 for an empty matrix).
    pub fn max_abs(&self) -> T {
        let mut m = T::zero();
        for &x in &self.data {
            if x.abs() > m {
                m = x.abs();
            }
        }
        m
    }

    /// Largest absolute elementwise difference against `other`.
    pub fn max_abs_diff(&self, other: &DenseMat<T>) -> Result<T, MatrixError> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(MatrixError::DimensionMismatch {
                context: "max_abs_diff",
                left: self.rows * self.cols,
                right: other.rows * other.cols,
            });
        }
        let mut m = T::zero();
        for (&a, &b) in self.data.iter().zip(&other.data) {
            let d = (a - b).abs();
            if d > m {
                m = d;
            }
        }
        Ok(m)
    }

    /// Exact (bitwise) symmetry check. Inputs built by this crate mirror
    /// symmetric products, so any asymmetry is a genuine input defect.
    pub fn is_symmetric(&self) -> bool {
        if self.rows != self.cols {
            return false;
        }
        for i in 0..self.rows {
            for j in (i + 1)..self.cols {
                if self[(i, j)].to_bits_u64() != self[(j, i)].to_bits_u64() {
                    return false;
                }
            }
        }
        true
    }
}

impl<T: Scalar> std::ops::Index<(usize, usize)> for DenseMat<T> {
    type Output = T;
    fn index(&self, (i, j): (usize, usize)) -> &T {
        &self.data[i * self.cols + j]
    }
}

impl<T: Scalar> std::ops::IndexMut<(usize, usize)> for DenseMat<T> {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut T {
        &mut self.data[i * self.cols + j]
    }
}

/// Offset of element (i, j), j ≥ i, in packed upper-triangular row-major
/// storage: row i holds columns i..n−1, so rows 0..i contribute
/// n + (n−1) + … + (n−i+1) = i·(2n−i+1)/2 elements before row i begins.
#[inline(always)]
pub fn packed_index(n: usize, i: usize, j: usize) -> usize {
    debug_assert!(i <= j && j < n);
    i * (2 * n - i + 1) / 2 + (j - i)
}

/// Number of elements in the packed upper triangle of an n×n matrix.
#[inline]
pub fn packed_len(n: usize) -> usize {
    n * (n + 1) / 2
}

/// Upper-triangular Cholesky factor L with A = LᵀL, packed row-major:
/// row i stores columns i..n−1 contiguously.
#[derive(Debug, Clone, PartialEq)]
pub struct TriFactor<T: Scalar> {
    n: usize,
    data: Vec<T>,
}

impl<T: Scalar> TriFactor<T> {
    pub fn zeros(n: usize) -> Self {
        TriFactor { n, data: vec![T::zero(); packed_len(n)] }
    }

    pub fn identity(n: usize) -> Self {
        let mut l = Self::zeros(n);
        for i in 0..n {
            l[(i, i)] = T::one();
        }
        l
    }

    pub fn from_data(n: usize, data: Vec<T>) -> Result<Self, MatrixError> {
        if data.len() != packed_len(n) {
            return Err(MatrixError::LengthMismatch { expected: packed_len(n), actual: data.len() });
        }
        Ok(TriFactor { n, data })
    }

    pub fn n(&self) -> usize {
        self.n
    }
    pub fn data(&self) -> &[T] {
        &self.data
    }
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    /// Dense unpacking (strict lower triangle zero-filled).
    pub fn to_dense(&self) -> DenseMat<T> {
        let mut m = DenseMat::zeros(self.n, self.n);
        for i in 0..self.n {
            for j in i..self.n {
                m[(i, j)] = self[(i, j)];
            }
        }
        m
    }

    /// Largest ulp distance across all packed elements.
    pub fn max_ulp_diff(&self, other: &TriFactor<T>) -> Result<u64, MatrixError> {
        if self.n != other.n {
            return Err(MatrixError::DimensionMismatch {
                context: "max_ulp_diff",
                left: self.n,
                right: other.n,
            });
        }
        let mut m = 0u64;
        for (&a, &b) in self.data.iter().zip(&other.data) {
            m = m.max(a.ulp_diff(b));
        }
        Ok(m)
    }

    /// True iff every packed element is bitwise identical.
    pub fn bitwise_eq(&self, other: &TriFactor<T>) -> bool {
        self.n == other.n
            && self
                .data
                .iter()
                .zip(&other.data)
                .all(|(a, b)| a.to_bits_u64() == b.to_bits_u64())
    }
}

impl<T: Scalar> std::ops::Index<(usize, usize)> for TriFactor<T> {
    type Output = T;
    fn index(&self, (i, j): (usize, usize)) -> &T {
        &self.data[packed_index(self.n, i, j)]
    }
}

impl<T: Scalar> std::ops::IndexMut<(usize, usize)> for TriFactor<T> {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut T {
        let idx = packed_index(self.n, i, j);
        &mut self.data[idx]
    }
}

/// The n×k update matrix V, stored column-major so each update vector is
/// contiguous.
#[derive(Debug, Clone, PartialEq)]
pub struct UpdateMat<T: Scalar> {
    n: usize,
    k: usize,
    data: Vec<T>,
}

impl<T: Scalar> UpdateMat<T> {
    pub fn zeros(n: usize, k: usize) -> Result<Self, MatrixError> {
        if k == 0 || n == 0 {
            return Err(MatrixError::EmptyDimension);
        }
        Ok(UpdateMat { n, k, data: vec![T::zero(); n * k] })
    }

    pub fn from_data(n: usize, k: usize, data: Vec<T>) -> Result<Self, MatrixError> {
        if k == 0 || n == 0 {
            return Err(MatrixError::EmptyDimension);
        }
        if data.len() != n * k {
            return Err(MatrixError::LengthMismatch { expected: n * k, actual: data.len() });
        }
        Ok(UpdateMat { n, k, data })
    }

    pub fn from_column(v: Vec<T>) -> Result<Self, MatrixError> {
        let n = v.len();
        Self::from_data(n, 1, v)
    }

    pub fn n(&self) -> usize {
        self.n
    }
    pub fn k(&self) -> usize {
        self.k
    }
    pub fn data(&self) -> &[T] {
        &self.data
    }
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn column(&self, e: usize) -> &[T] {
        &self.data[e * self.n..(e + 1) * self.n]
    }

    pub fn column_mut(&mut self, e: usize) -> &mut [T] {
        &mut self.data[e * self.n..(e + 1) * self.n]
    }

    pub fn bitwise_eq(&self, other: &UpdateMat<T>) -> bool {
        self.n == other.n
            && self.k == other.k
            && self
                .data
                .iter()
                .zip(&other.data)
                .all(|(a, b)| a.to_bits_u64() == b.to_bits_u64())
    }
}

impl<T: Scalar> std::ops::Index<(usize, usize)> for UpdateMat<T> {
    type Output = T;
    fn index(&self, (i, e): (usize, usize)) -> &T {
        &self.data[e * self.n + i]
    }
}

impl<T: Scalar> std::ops::IndexMut<(usize, usize)> for UpdateMat<T> {
    fn index_mut(&mut self, (i, e): (usize, usize)) -> &mut T {
        &mut self.data[e * self.n + i]
    }
}

/// C = LᵀL as a dense symmetric matrix.
///
/// C_ij = Σ_{m ≤ min(i,j)} L_{m,i}·L_{m,j}; each unordered pair is computed
/// once and mirrored, so the result is bitwise symmetric by construction.
pub fn tri_transpose_mul<T: Scalar>(l: &TriFactor<T>) -> DenseMat<T> {
    let n = l.n();
    let mut c = DenseMat::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let mut acc = T::zero();
            for m in 0..=i {
                acc = acc + l[(m, i)] * l[(m, j)];
            }
            c[(i, j)] = acc;
            c[(j, i)] = acc;
        }
    }
    c
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn packed_index_matches_reference_formula() {
        // Reference formula i·n − i(i−1)/2 + (j−i), evaluated in signed
        // arithmetic to sidestep the usize underflow at i = 0.
        for n in 1..=16usize {
            let mut seen = vec![false; packed_len(n)];
            for i in 0..n {
                for j in i..n {
                    let reference =
                        (i as i64 * n as i64 - (i as i64 * (i as i64 - 1)) / 2 + (j - i) as i64)
                            as usize;
                    let idx = packed_index(n, i, j);
                    assert_eq!(idx, reference, "n={n} i={i} j={j}");
                    assert!(!seen[idx], "offset reused at n={n} i={i} j={j}");
                    seen[idx] = true;
                }
            }
            assert!(seen.iter().all(|&s| s), "offsets not exhaustive for n={n}");
        }
    }

    #[test]
    fn tri_transpose_mul_identity() {
        for n in [1usize, 3, 7] {
            let c = tri_transpose_mul(&TriFactor::<f64>::identity(n));
            assert_eq!(c, DenseMat::identity(n));
        }
    }

    #[test]
    fn tri_transpose_mul_hand_expansion() {
        // L = [[3, 2], [., 3]] (upper) → LᵀL = [[9, 6], [6, 13]].
        let l = TriFactor::from_data(2, vec![3.0f64, 2.0, 3.0]).unwrap();
        let c = tri_transpose_mul(&l);
        assert_eq!(c.data(), &[9.0, 6.0, 6.0, 13.0]);
    }

    #[test]
    fn tri_transpose_mul_bitwise_symmetric() {
        // Deterministic pseudo-random fill; symmetry must hold bitwise.
        let n = 17usize;
        let mut l = TriFactor::<f64>::zeros(n);
        let mut state = 0x1234_5678_9abc_def0u64;
        for i in 0..n {
            for j in i..n {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                l[(i, j)] = (state >> 11) as f64 / (1u64 << 53) as f64 + if i == j { 1.0 } else { 0.0 };
            }
        }
        let c = tri_transpose_mul(&l);
        assert!(c.is_symmetric());
    }

    #[test]
    fn update_mat_rejects_empty() {
        assert_eq!(UpdateMat::<f64>::zeros(4, 0), Err(MatrixError::EmptyDimension));
        assert_eq!(UpdateMat::<f64>::zeros(0, 1), Err(MatrixError::EmptyDimension));
    }

    #[test]
    fn update_mat_columns_are_contiguous() {
        let v = UpdateMat::from_data(3, 2, vec![1.0f64, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        assert_eq!(v.column(0), &[1.0, 2.0, 3.0]);
        assert_eq!(v.column(1), &[4.0, 5.0, 6.0]);
        assert_eq!(v[(2, 1)], 6.0);
    }

    #[test]
    fn length_mismatch_is_reported() {
        let err = DenseMat::from_data(2, 2, vec![1.0f64; 3]).unwrap_err();
        assert_eq!(err, MatrixError::LengthMismatch { expected: 4, actual: 3 });
    }
}
