//! Symmetric banded matrices, banded Cholesky and Takahashi's selected
//! inversion.
//!
//! Block-banded matrices with `K` blocks of size `D` and block bandwidth `b`
//! are stored as scalar-banded matrices with half bandwidth `(b+1)·D − 1`,
//! which contains every in-band block. Only the lower band is stored.

use nalgebra::{DMatrix, DVector, Dim, Matrix, RawStorage};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct SymBandMatrix {
    n: usize,
    half_bw: usize,
    data: Vec<f64>,
}

#[inline]
fn offset(p: usize, i: usize, j: usize) -> usize {
    i * (p + 1) + j + p - i
}

impl SymBandMatrix {
    pub fn zeros(n: usize, half_bw: usize) -> Self {
        SymBandMatrix {
            n,
            half_bw,
            data: vec![0.0; n * (half_bw + 1)],
        }
    }

    /// Zero matrix sized for `n_blocks` blocks of `block_dim` with the given
    /// block bandwidth.
    pub fn zeros_blocked(n_blocks: usize, block_dim: usize, block_bw: usize) -> Self {
        let p = ((block_bw + 1) * block_dim).saturating_sub(1);
        Self::zeros(n_blocks * block_dim, p)
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, 0);
        for i in 0..n {
            m.data[i] = 1.0;
        }
        m
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn half_bandwidth(&self) -> usize {
        self.half_bw
    }

    pub fn in_band(&self, i: usize, j: usize) -> bool {
        i.abs_diff(j) <= self.half_bw
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        if i - j > self.half_bw {
            0.0
        } else {
            self.data[offset(self.half_bw, i, j)]
        }
    }

    /// Adds `v` to entry `(i, j)` (and implicitly `(j, i)`).
    ///
    /// Panics if the entry lies outside the band.
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        assert!(i - j <= self.half_bw, "entry ({i}, {j}) outside band {}", self.half_bw);
        self.data[offset(self.half_bw, i, j)] += v;
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        assert!(i - j <= self.half_bw, "entry ({i}, {j}) outside band {}", self.half_bw);
        self.data[offset(self.half_bw, i, j)] = v;
    }

    /// Adds a dense block whose top-left corner sits at `(r0, c0)` with
    /// `r0 ≥ c0`. Entries above the diagonal are taken to be the mirror of
    /// the lower part and are skipped.
    pub fn add_block<R: Dim, C: Dim, S: RawStorage<f64, R, C>>(&mut self, r0: usize, c0: usize, block: &Matrix<f64, R, C, S>) {
        for c in 0..block.ncols() {
            for r in 0..block.nrows() {
                let (i, j) = (r0 + r, c0 + c);
                if i >= j {
                    self.add(i, j, block[(r, c)]);
                }
            }
        }
    }

    /// Extracts the dense `rows × cols` block at `(r0, c0)`.
    pub fn block(&self, r0: usize, c0: usize, rows: usize, cols: usize) -> DMatrix<f64> {
        DMatrix::from_fn(rows, cols, |r, c| self.get(r0 + r, c0 + c))
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.n, self.n, |i, j| self.get(i, j))
    }

    pub fn from_dense(a: &DMatrix<f64>, half_bw: usize) -> Self {
        let mut m = Self::zeros(a.nrows(), half_bw);
        for i in 0..a.nrows() {
            for j in i.saturating_sub(half_bw)..=i {
                m.set(i, j, 0.5 * (a[(i, j)] + a[(j, i)]));
            }
        }
        m
    }

    pub fn trace(&self) -> f64 {
        (0..self.n).map(|i| self.get(i, i)).sum()
    }

    pub fn mul_vec(&self, x: &DVector<f64>) -> DVector<f64> {
        assert_eq!(x.len(), self.n);
        let p = self.half_bw;
        let mut y = DVector::zeros(self.n);
        for i in 0..self.n {
            for j in i.saturating_sub(p)..i {
                let a = self.data[offset(p, i, j)];
                y[i] += a * x[j];
                y[j] += a * x[i];
            }
            y[i] += self.data[offset(p, i, i)] * x[i];
        }
        y
    }

    /// `xᵀ A x`.
    pub fn quadratic_form(&self, x: &DVector<f64>) -> f64 {
        x.dot(&self.mul_vec(x))
    }

    /// Banded Cholesky `A = L·Lᵀ`; `L` keeps the band of `A`.
    pub fn cholesky(&self) -> Result<BandCholesky> {
        let n = self.n;
        let p = self.half_bw;
        let mut l = vec![0.0; self.data.len()];
        for i in 0..n {
            let lo = i.saturating_sub(p);
            for j in lo..=i {
                let mut s = self.data[offset(p, i, j)];
                let klo = lo.max(j.saturating_sub(p));
                for k in klo..j {
                    s -= l[offset(p, i, k)] * l[offset(p, j, k)];
                }
                if i == j {
                    if !(s > 0.0) || !s.is_finite() {
                        return Err(Error::Conditioning(format!(
                            "banded Cholesky failed at pivot {i} (value {s:.3e})"
                        )));
                    }
                    l[offset(p, i, i)] = s.sqrt();
                } else {
                    l[offset(p, i, j)] = s / l[offset(p, j, j)];
                }
            }
        }
        Ok(BandCholesky { n, p, l })
    }

    /// Cholesky with one retry after adding `1e-10·trace/n·I`.
    pub fn cholesky_jittered(&self) -> Result<BandCholesky> {
        match self.cholesky() {
            Ok(c) => Ok(c),
            Err(_) => {
                let mut jittered = self.clone();
                let jitter = 1e-10 * self.trace().abs() / self.n.max(1) as f64;
                for i in 0..self.n {
                    jittered.add(i, i, jitter);
                }
                jittered.cholesky()
            }
        }
    }
}

/// Lower-triangular banded Cholesky factor.
#[derive(Clone, Debug)]
pub struct BandCholesky {
    n: usize,
    p: usize,
    l: Vec<f64>,
}

impl BandCholesky {
    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn half_bandwidth(&self) -> usize {
        self.p
    }

    #[inline]
    pub fn l(&self, i: usize, j: usize) -> f64 {
        if j > i || i - j > self.p {
            0.0
        } else {
            self.l[offset(self.p, i, j)]
        }
    }

    pub fn to_dense_l(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.n, self.n, |i, j| self.l(i, j))
    }

    pub fn log_det(&self) -> f64 {
        2.0 * (0..self.n).map(|i| self.l[offset(self.p, i, i)].ln()).sum::<f64>()
    }

    /// Solves `A x = b` by forward and backward substitution.
    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        assert_eq!(b.len(), self.n);
        let p = self.p;
        let mut y = b.clone();
        for i in 0..self.n {
            let mut s = y[i];
            for k in i.saturating_sub(p)..i {
                s -= self.l[offset(p, i, k)] * y[k];
            }
            y[i] = s / self.l[offset(p, i, i)];
        }
        for i in (0..self.n).rev() {
            let mut s = y[i];
            for k in (i + 1)..(i + p + 1).min(self.n) {
                s -= self.l[offset(p, k, i)] * y[k];
            }
            y[i] = s / self.l[offset(p, i, i)];
        }
        y
    }

    /// In-band entries of `A⁻¹` by the Takahashi recursion. Entries outside
    /// the band are not produced.
    pub fn takahashi(&self) -> SymBandMatrix {
        let n = self.n;
        let p = self.p;
        let mut sigma = SymBandMatrix::zeros(n, p);
        for j in (0..n).rev() {
            let ljj = self.l[offset(p, j, j)];
            let hi = (j + p).min(n.saturating_sub(1));
            for i in ((j + 1)..=hi).rev() {
                let mut s = 0.0;
                for k in (j + 1)..=hi {
                    s += self.l[offset(p, k, j)] * sigma.get(k, i);
                }
                sigma.set(i, j, -s / ljj);
            }
            let mut s = 0.0;
            for k in (j + 1)..=hi {
                s += self.l[offset(p, k, j)] * sigma.get(k, j);
            }
            sigma.set(j, j, 1.0 / (ljj * ljj) - s / ljj);
        }
        sigma
    }
}

/// Solves `A·step = g` for SPD banded `A`.
pub fn solve_banded(a: &SymBandMatrix, g: &DVector<f64>) -> Result<DVector<f64>> {
    Ok(a.cholesky_jittered()?.solve(g))
}

/// Diagonal `block_dim × block_dim` blocks of `A⁻¹` from a factor of `A`.
pub fn takahashi_marginals(factor: &BandCholesky, block_dim: usize) -> Vec<DMatrix<f64>> {
    let sigma = factor.takahashi();
    (0..factor.dim() / block_dim)
        .map(|k| sigma.block(k * block_dim, k * block_dim, block_dim, block_dim))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_spd_band(rng: &mut ChaCha8Rng, n: usize, p: usize) -> SymBandMatrix {
        let mut a = SymBandMatrix::zeros(n, p);
        for i in 0..n {
            for j in i.saturating_sub(p)..i {
                a.set(i, j, rng.random_range(-1.0..1.0));
            }
            a.set(i, i, 2.0 * (p as f64 + 1.0) + rng.random_range(0.0..1.0));
        }
        a
    }

    #[test]
    fn identity_solve_returns_rhs() {
        let a = SymBandMatrix::identity(7);
        let g = DVector::from_fn(7, |i, _| i as f64 - 3.0);
        assert_eq!(solve_banded(&a, &g).unwrap(), g);
    }

    #[test]
    fn solve_matches_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for p in [0, 1, 2, 5, 8] {
            let a = random_spd_band(&mut rng, 60, p);
            let g = DVector::from_fn(60, |_, _| rng.random_range(-1.0..1.0));
            let x = solve_banded(&a, &g).unwrap();
            let dense = a.to_dense();
            let resid = &dense * &x - &g;
            assert!(resid.norm() <= 1e-9 * g.norm());
            let xd = dense.cholesky().unwrap().solve(&g);
            assert!((x - xd).abs().max() < 1e-9);
        }
    }

    #[test]
    fn factor_matches_dense_cholesky() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let a = random_spd_band(&mut rng, 30, 4);
        let l = a.cholesky().unwrap().to_dense_l();
        let ld = a.to_dense().cholesky().unwrap().l();
        assert!((l - ld).abs().max() < 1e-12);
    }

    #[test]
    fn takahashi_matches_dense_inverse_in_band() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for p in [0, 2, 5, 11] {
            let a = random_spd_band(&mut rng, 40, p);
            let sigma = a.cholesky().unwrap().takahashi();
            let inv = a.to_dense().try_inverse().unwrap();
            for i in 0..40usize {
                for j in i.saturating_sub(p)..=i {
                    let rel = (sigma.get(i, j) - inv[(i, j)]).abs() / inv[(i, i)].abs();
                    assert!(rel < 1e-10, "p={p} ({i},{j})");
                }
            }
        }
    }

    #[test]
    fn diagonal_takahashi_is_reciprocal() {
        let mut a = SymBandMatrix::zeros(5, 0);
        for i in 0..5 {
            a.set(i, i, (i + 1) as f64);
        }
        let s = a.cholesky().unwrap().takahashi();
        for i in 0..5 {
            assert!((s.get(i, i) - 1.0 / (i + 1) as f64).abs() < 1e-15);
        }
    }

    #[test]
    fn non_spd_is_conditioning_error() {
        let mut a = SymBandMatrix::identity(3);
        a.set(1, 1, -1.0);
        assert!(matches!(a.cholesky_jittered(), Err(Error::Conditioning(_))));
    }

    #[test]
    fn mul_vec_and_quadratic_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let a = random_spd_band(&mut rng, 20, 3);
        let x = DVector::from_fn(20, |_, _| rng.random_range(-1.0..1.0));
        let dense = a.to_dense();
        assert!((a.mul_vec(&x) - &dense * &x).abs().max() < 1e-12);
        assert!((a.quadratic_form(&x) - x.dot(&(&dense * &x))).abs() < 1e-10);
        let logdet: f64 = dense.cholesky().unwrap().l().diagonal().iter().map(|v| 2.0 * v.ln()).sum();
        assert!((a.cholesky().unwrap().log_det() - logdet).abs() < 1e-10);
    }
}
