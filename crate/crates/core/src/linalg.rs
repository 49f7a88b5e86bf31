//! Banded LU factorization with partial pivoting.
//!
//! The discretized operator L = -d²/dy² + 1 - 5Q⁴ with a 5-point stencil is
//! pentadiagonal; a dense solve at the reference resolution (n = 5001) would
//! be wasteful. This is the textbook band algorithm: a matrix with `kl`
//! sub- and `ku` super-diagonals is stored with `kl` extra fill diagonals so
//! row swaps stay inside the band.

use crate::error::{CoreError, Result};

#[derive(Debug, Clone)]
pub struct BandMatrix {
    n: usize,
    kl: usize,
    ku: usize,
    /// Superdiagonal width including pivot fill (ku + kl).
    kv: usize,
    /// Entry A[i][j] lives at `ab[(kv + i - j) * n + j]`.
    ab: Vec<f64>,
}

impl BandMatrix {
    pub fn zeros(n: usize, kl: usize, ku: usize) -> Self {
        let kv = kl + ku;
        Self {
            n,
            kl,
            ku,
            kv,
            ab: vec![0.0; (kv + kl + 1) * n],
        }
    }

    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        debug_assert!(j <= i + self.kv && i <= j + self.kl);
        (self.kv + i - j) * self.n + j
    }

    #[inline]
    fn at(&self, i: usize, j: usize) -> f64 {
        self.ab[self.idx(i, j)]
    }

    /// Set A[i][j]; panics if the entry lies outside the declared band.
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        assert!(i < self.n && j < self.n, "index out of range");
        assert!(
            j <= i + self.ku && i <= j + self.kl,
            "entry ({i},{j}) outside band"
        );
        let id = self.idx(i, j);
        self.ab[id] = v;
    }

    /// LU factorization with partial pivoting and forward/back substitution.
    /// Consumes the matrix.
    pub fn solve(mut self, b: &[f64]) -> Result<Vec<f64>> {
        assert_eq!(b.len(), self.n);
        let n = self.n;
        let kl = self.kl;
        let kv = self.kv;
        let mut x = b.to_vec();

        for k in 0..n {
            let last_row = (k + kl).min(n - 1);
            let mut piv = k;
            let mut pmax = self.at(k, k).abs();
            for i in (k + 1)..=last_row {
                let v = self.at(i, k).abs();
                if v > pmax {
                    pmax = v;
                    piv = i;
                }
            }
            if pmax == 0.0 || !pmax.is_finite() {
                return Err(CoreError::SingularSystem(format!(
                    "pivot {pmax} at column {k}"
                )));
            }
            let last_col = (k + kv).min(n - 1);
            if piv != k {
                for j in k..=last_col {
                    let (a, b2) = (self.idx(k, j), self.idx(piv, j));
                    self.ab.swap(a, b2);
                }
                x.swap(k, piv);
            }
            let akk = self.at(k, k);
            for i in (k + 1)..=last_row {
                let m = self.at(i, k) / akk;
                if m != 0.0 {
                    for j in (k + 1)..=last_col {
                        let delta = m * self.at(k, j);
                        let id = self.idx(i, j);
                        self.ab[id] -= delta;
                    }
                    x[i] -= m * x[k];
                }
            }
        }

        for k in (0..n).rev() {
            let last_col = (k + kv).min(n - 1);
            let mut s = x[k];
            for j in (k + 1)..=last_col {
                s -= self.at(k, j) * x[j];
            }
            x[k] = s / self.at(k, k);
        }
        Ok(x)
    }
}
