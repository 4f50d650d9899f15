use nalgebra::{DMatrix, DVector};

/// A block of linear rows `a * z (=|<=) b`. Whether the rows are
/// equalities or inequalities is decided by where the block is used.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearRows {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
}

impl LinearRows {
    pub fn empty(ncols: usize) -> Self {
        Self {
            a: DMatrix::zeros(0, ncols),
            b: DVector::zeros(0),
        }
    }

    pub fn new(a: DMatrix<f64>, b: DVector<f64>) -> Self {
        debug_assert_eq!(a.nrows(), b.len());
        Self { a, b }
    }

    pub fn nrows(&self) -> usize {
        self.a.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.a.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.a.nrows() == 0
    }

    /// Stacks blocks vertically. All blocks must have the same width.
    pub fn stack(ncols: usize, blocks: &[&LinearRows]) -> Self {
        let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
        let mut a = DMatrix::zeros(rows, ncols);
        let mut b = DVector::zeros(rows);
        let mut at = 0;
        for block in blocks {
            assert_eq!(block.ncols(), ncols, "row block width mismatch");
            let n = block.nrows();
            a.view_mut((at, 0), (n, ncols)).copy_from(&block.a);
            b.rows_mut(at, n).copy_from(&block.b);
            at += n;
        }
        Self { a, b }
    }

    /// Pads with zero columns on the right to `ncols`.
    pub fn widen(&self, ncols: usize) -> Self {
        assert!(ncols >= self.ncols());
        let mut a = DMatrix::zeros(self.nrows(), ncols);
        a.view_mut((0, 0), (self.nrows(), self.ncols()))
            .copy_from(&self.a);
        Self {
            a,
            b: self.b.clone(),
        }
    }

    /// Largest violation of `a z <= b` (zero when satisfied).
    pub fn max_violation_le(&self, z: &DVector<f64>) -> f64 {
        (&self.a * z - &self.b)
            .iter()
            .fold(0.0, |acc, r| acc.max(*r))
    }

    /// Largest residual of `a z = b`.
    pub fn max_residual_eq(&self, z: &DVector<f64>) -> f64 {
        (&self.a * z - &self.b).amax()
    }
}

pub(crate) fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    let mut acc = 1.0;
    for i in 0..k {
        acc = acc * (n - i) as f64 / (i + 1) as f64;
    }
    acc.round()
}

/// `n! / (n - k)!`
pub(crate) fn falling_factorial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    ((n - k + 1)..=n).fold(1.0, |acc, v| acc * v as f64)
}
