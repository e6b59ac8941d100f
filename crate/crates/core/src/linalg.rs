//! Small dense SPD helpers shared by the learners and the estimator.

use nalgebra::{Cholesky, DMatrix, Dyn, SymmetricEigen};

use crate::error::{Error, Result};

/// Gram matrices with a condition number above this are treated as singular.
pub const MAX_CONDITION: f64 = 1e12;

/// Cholesky factorization with a single deterministic jitter retry of
/// `1e-10·trace/n·I`.
pub fn cholesky_jittered(a: &DMatrix<f64>, what: &str) -> Result<Cholesky<f64, Dyn>> {
    let sym = symmetrize(a);
    if let Some(c) = Cholesky::new(sym.clone()) {
        return Ok(c);
    }
    let n = sym.nrows().max(1);
    let jitter = 1e-10 * sym.trace().abs() / n as f64;
    let mut jittered = sym;
    for i in 0..n {
        jittered[(i, i)] += jitter;
    }
    Cholesky::new(jittered).ok_or_else(|| Error::Conditioning(format!("{what} is not SPD")))
}

pub fn symmetrize(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}

/// Inverse of an SPD matrix through Cholesky.
pub fn spd_inverse(a: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    let inv = cholesky_jittered(a, what)?.inverse();
    Ok(symmetrize(&inv))
}

/// `ln|A|` for SPD `A`.
pub fn spd_logdet(a: &DMatrix<f64>, what: &str) -> Result<f64> {
    let c = cholesky_jittered(a, what)?;
    Ok(2.0 * c.l().diagonal().iter().map(|d| d.ln()).sum::<f64>())
}

/// Spectral condition number of a symmetric matrix (`∞` when not PD).
pub fn condition_number(a: &DMatrix<f64>) -> f64 {
    if a.nrows() == 0 {
        return 1.0;
    }
    let eig = SymmetricEigen::new(symmetrize(a));
    let max = eig.eigenvalues.max();
    let min = eig.eigenvalues.min();
    if min <= 0.0 || !min.is_finite() {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Rejects rank-deficient Gram matrices before they are inverted.
pub fn check_gram(gram: &DMatrix<f64>) -> Result<()> {
    let cond = condition_number(gram);
    if !(cond <= MAX_CONDITION) {
        return Err(Error::RankDeficient { condition: cond });
    }
    Ok(())
}

pub fn is_spd(a: &DMatrix<f64>) -> bool {
    a.iter().all(|v| v.is_finite()) && Cholesky::new(symmetrize(a)).is_some()
}
