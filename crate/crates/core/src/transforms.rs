//! Walsh–Hadamard and permutation operators used by the OTSM chain.
//!
//! The Walsh matrix is kept in sequency order (row `n` has exactly `n` sign
//! changes) and normalized by `1/sqrt(N)`, which makes it symmetric and
//! self-inverse. Application goes through a natural-order butterfly followed by
//! a row permutation, so the dense matrix is only materialized on request.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{invalid_arg, Result};

pub(crate) fn check_power_of_two(order: usize, what: &str) -> Result<()> {
    if order == 0 || !order.is_power_of_two() {
        return Err(invalid_arg(format!(
            "{what} must be a non-zero power of two, got {order}"
        )));
    }
    Ok(())
}

/// Number of sign changes along a row of ±1 values.
pub fn sign_changes(row: &[f64]) -> usize {
    row.windows(2)
        .filter(|w| (w[0] < 0.0) != (w[1] < 0.0))
        .count()
}

/// Natural-order (Sylvester) Hadamard sign: `(-1)^{popcount(i & j)}`.
#[inline]
fn sylvester_sign(i: usize, j: usize) -> f64 {
    if (i & j).count_ones() % 2 == 0 {
        1.0
    } else {
        -1.0
    }
}

/// Maps a sequency index to the Sylvester row with that many sign changes.
fn sequency_permutation(order: usize) -> Vec<usize> {
    let mut rows: Vec<(usize, usize)> = (0..order)
        .map(|i| {
            let row: Vec<f64> = (0..order).map(|j| sylvester_sign(i, j)).collect();
            (sign_changes(&row), i)
        })
        .collect();
    rows.sort_unstable();
    rows.into_iter().map(|(_, i)| i).collect()
}

/// Sequency-ordered, `1/sqrt(N)`-normalized Walsh–Hadamard matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct WalshMatrix {
    order: usize,
    entries: DMatrix<f64>,
}

impl WalshMatrix {
    pub fn new(order: usize) -> Result<Self> {
        check_power_of_two(order, "Walsh order")?;
        let perm = sequency_permutation(order);
        let scale = 1.0 / (order as f64).sqrt();
        let entries = DMatrix::from_fn(order, order, |r, c| scale * sylvester_sign(perm[r], c));
        Ok(Self { order, entries })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn entry(&self, row: usize, col: usize) -> f64 {
        self.entries[(row, col)]
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn to_complex(&self) -> DMatrix<Complex64> {
        self.entries.map(|v| Complex64::new(v, 0.0))
    }
}

/// Builds [`WalshMatrix`] of the given order.
pub fn wht_matrix(order: usize) -> Result<WalshMatrix> {
    WalshMatrix::new(order)
}

/// Fast `O(N log N)` application of the sequency-ordered Walsh matrix.
#[derive(Debug, Clone)]
pub struct WalshTransform {
    order: usize,
    // sequency index -> natural index
    perm: Vec<usize>,
    scale: f64,
}

impl WalshTransform {
    pub fn new(order: usize) -> Result<Self> {
        check_power_of_two(order, "Walsh order")?;
        Ok(Self {
            order,
            perm: sequency_permutation(order),
            scale: 1.0 / (order as f64).sqrt(),
        })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    /// In-place `x <- W x`; `scratch` must have the same length as `x`.
    pub fn apply_in_place(&self, x: &mut [Complex64], scratch: &mut [Complex64]) {
        debug_assert_eq!(x.len(), self.order);
        debug_assert_eq!(scratch.len(), self.order);
        let n = self.order;
        let mut half = 1;
        while half < n {
            for start in (0..n).step_by(2 * half) {
                for j in start..start + half {
                    let a = x[j];
                    let b = x[j + half];
                    x[j] = a + b;
                    x[j + half] = a - b;
                }
            }
            half *= 2;
        }
        for (s, &nat) in self.perm.iter().enumerate() {
            scratch[s] = x[nat] * self.scale;
        }
        x.copy_from_slice(scratch);
    }

    /// Applies the transform to each consecutive length-`N` block of `data`.
    pub fn apply_blocks(&self, data: &mut [Complex64]) {
        let mut scratch = vec![Complex64::default(); self.order];
        for block in data.chunks_exact_mut(self.order) {
            self.apply_in_place(block, &mut scratch);
        }
    }
}

/// Index permutation taking `vec(X)` of a `rows x cols` matrix to `vec(X^T)`.
///
/// Stored as a gather table: `(P v)[i] = v[perm[i]]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PerfectShuffle {
    rows: usize,
    cols: usize,
    perm: Vec<usize>,
}

impl PerfectShuffle {
    pub fn new(rows: usize, cols: usize) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(invalid_arg("perfect shuffle dimensions must be positive"));
        }
        let mut perm = vec![0; rows * cols];
        for r in 0..rows {
            for c in 0..cols {
                perm[c + r * cols] = r + c * rows;
            }
        }
        Ok(Self { rows, cols, perm })
    }

    pub fn len(&self) -> usize {
        self.perm.len()
    }

    pub fn is_empty(&self) -> bool {
        self.perm.is_empty()
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn indices(&self) -> &[usize] {
        &self.perm
    }

    pub fn apply<T: Copy>(&self, v: &[T]) -> Vec<T> {
        assert_eq!(v.len(), self.perm.len(), "shuffle length mismatch");
        self.perm.iter().map(|&i| v[i]).collect()
    }

    pub fn apply_transpose<T: Copy + Default>(&self, v: &[T]) -> Vec<T> {
        assert_eq!(v.len(), self.perm.len(), "shuffle length mismatch");
        let mut out = vec![T::default(); v.len()];
        for (i, &src) in self.perm.iter().enumerate() {
            out[src] = v[i];
        }
        out
    }

    /// The inverse permutation, i.e. the shuffle for `cols x rows` matrices.
    pub fn transpose(&self) -> Self {
        Self::new(self.cols, self.rows).expect("dimensions already validated")
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.perm.len();
        let mut m = DMatrix::zeros(n, n);
        for (i, &j) in self.perm.iter().enumerate() {
            m[(i, j)] = 1.0;
        }
        m
    }
}

/// Builds the shuffle permutation with `A ⊗ B = P (B ⊗ A) P^T` for `A: m x m`, `B: n x n`.
pub fn perfect_shuffle(m: usize, n: usize) -> Result<PerfectShuffle> {
    PerfectShuffle::new(m, n)
}

/// Returns `X · W_N`, i.e. the Walsh transform of every row of `X`.
pub fn apply_iwht_rows(x: &DMatrix<Complex64>) -> Result<DMatrix<Complex64>> {
    let cols = x.ncols();
    check_power_of_two(cols, "row length")?;
    let wt = WalshTransform::new(cols)?;
    let mut out = x.clone();
    let mut row = vec![Complex64::default(); cols];
    let mut scratch = vec![Complex64::default(); cols];
    for r in 0..x.nrows() {
        for c in 0..cols {
            row[c] = x[(r, c)];
        }
        // W is symmetric, so x W = (W x^T)^T.
        wt.apply_in_place(&mut row, &mut scratch);
        for c in 0..cols {
            out[(r, c)] = row[c];
        }
    }
    Ok(out)
}

/// Dense Kronecker product.
pub fn kron<T>(a: &DMatrix<T>, b: &DMatrix<T>) -> DMatrix<T>
where
    T: nalgebra::Scalar + Copy + std::ops::Mul<Output = T>,
{
    let (ar, ac) = a.shape();
    let (br, bc) = b.shape();
    DMatrix::from_fn(ar * br, ac * bc, |i, j| {
        a[(i / br, j / bc)] * b[(i % br, j % bc)]
    })
}
