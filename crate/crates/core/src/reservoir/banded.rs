//! Banded Cholesky factorization for the symmetric positive definite
//! pressure matrix.

use super::SimError;

pub struct BandedSpd {
    n: usize,
    bw: usize,
    // row i holds A[i][i-bw ..= i], diagonal last
    data: Vec<f64>,
}

impl BandedSpd {
    pub fn new(n: usize, bw: usize) -> Self {
        Self {
            n,
            bw,
            data: vec![0.0; n * (bw + 1)],
        }
    }

    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        debug_assert!(j <= i && i - j <= self.bw);
        i * (self.bw + 1) + self.bw - (i - j)
    }

    /// Adds `v` to `A[i][j]` (and implicitly `A[j][i]`).
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let (i, j) = if j <= i { (i, j) } else { (j, i) };
        let k = self.idx(i, j);
        self.data[k] += v;
    }

    /// In-place `A = L·Lᵀ`. Pivots below `1e-12·max diag` are reported as a
    /// singular system.
    pub fn factor(&mut self) -> Result<(), SimError> {
        let n = self.n;
        let bw = self.bw;
        let max_diag = (0..n)
            .map(|i| self.data[self.idx(i, i)])
            .fold(0.0f64, f64::max);
        let tol = 1e-12 * max_diag.max(f64::MIN_POSITIVE);
        for i in 0..n {
            let lo = i.saturating_sub(bw);
            for j in lo..=i {
                let mut s = self.data[self.idx(i, j)];
                let klo = lo.max(j.saturating_sub(bw));
                for k in klo..j {
                    s -= self.data[self.idx(i, k)] * self.data[self.idx(j, k)];
                }
                if i == j {
                    if !(s > tol) {
                        return Err(SimError::Solver(format!(
                            "pressure matrix is singular (pivot {s:e} at row {i})"
                        )));
                    }
                    let d = self.idx(i, i);
                    self.data[d] = s.sqrt();
                } else {
                    let d = self.data[self.idx(j, j)];
                    let k = self.idx(i, j);
                    self.data[k] = s / d;
                }
            }
        }
        Ok(())
    }

    /// Solves with a factored matrix.
    pub fn solve(&self, b: &mut [f64]) {
        let n = self.n;
        let bw = self.bw;
        for i in 0..n {
            let mut s = b[i];
            for k in i.saturating_sub(bw)..i {
                s -= self.data[self.idx(i, k)] * b[k];
            }
            b[i] = s / self.data[self.idx(i, i)];
        }
        for i in (0..n).rev() {
            let mut s = b[i];
            for k in i + 1..(i + bw + 1).min(n) {
                s -= self.data[self.idx(k, i)] * b[k];
            }
            b[i] = s / self.data[self.idx(i, i)];
        }
    }
}
