#![allow(dead_code)]

use corrnoise::estimator::{
    measurement_error_jacobian, motion_error_jacobians, EstimationProblem, Measurements, Odometry, SolverConfig,
};
use corrnoise::banded::SymBandMatrix;
use corrnoise::noise::{BandedNoiseModel, CorrelatedFactor};
use corrnoise::se2::Twist2;
use corrnoise::Pose2;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal(rng: &mut ChaCha8Rng) -> f64 {
    <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng)
}

pub fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize, scale: f64) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| scale * normal(rng))
}

/// Well-conditioned random SPD matrix.
pub fn random_spd(rng: &mut ChaCha8Rng, m: usize) -> DMatrix<f64> {
    let a = random_matrix(rng, m, m, 1.0);
    &a * a.transpose() + DMatrix::identity(m, m) * (0.5 + rng.random::<f64>())
}

pub fn random_pose(rng: &mut ChaCha8Rng) -> Pose2 {
    Pose2::from_parts(
        rng.random_range(-5.0..5.0),
        rng.random_range(-5.0..5.0),
        rng.random_range(-3.1..3.1),
    )
}

/// Random model of length `k` with factor `i` holding `min(i, b)` S blocks.
pub fn random_banded_model(rng: &mut ChaCha8Rng, k: usize, m: usize, b: usize) -> BandedNoiseModel {
    let factors = (0..k)
        .map(|i| CorrelatedFactor {
            s: (0..i.min(b)).map(|_| random_matrix(rng, m, m, 0.4)).collect(),
            w: random_spd(rng, m),
        })
        .collect();
    BandedNoiseModel::new(b, m, factors).unwrap()
}

pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0f64, |a, v| a.max(v.abs()))
}

/// `‖a − b‖_max / max(‖b‖_max, tiny)`.
pub fn rel_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    max_abs(&(a - b)) / max_abs(b).max(1e-300)
}

/// Central-difference gradient.
pub fn numeric_gradient(f: &dyn Fn(&DVector<f64>) -> f64, x: &DVector<f64>, h: f64) -> DVector<f64> {
    let mut g = DVector::zeros(x.len());
    let mut xp = x.clone();
    for i in 0..x.len() {
        let step = h * x[i].abs().max(1.0);
        xp[i] = x[i] + step;
        let fp = f(&xp);
        xp[i] = x[i] - step;
        let fm = f(&xp);
        xp[i] = x[i];
        g[i] = (fp - fm) / (2.0 * step);
    }
    g
}

/// BFGS with backtracking (Armijo) line search and central-difference
/// gradients. Returns the minimizer.
pub fn bfgs(f: &dyn Fn(&DVector<f64>) -> f64, x0: DVector<f64>, max_iter: usize, gtol: f64) -> DVector<f64> {
    let n = x0.len();
    let mut x = x0;
    let mut fx = f(&x);
    let mut g = numeric_gradient(f, &x, 1e-6);
    let mut h = DMatrix::<f64>::identity(n, n);
    for _ in 0..max_iter {
        if g.amax() < gtol {
            break;
        }
        let mut p = -(&h * &g);
        if p.dot(&g) >= 0.0 {
            h = DMatrix::identity(n, n);
            p = -g.clone();
        }
        let mut t = 1.0;
        let slope = p.dot(&g);
        let mut accepted = None;
        for _ in 0..60 {
            let xn = &x + &p * t;
            let fn_ = f(&xn);
            if fn_.is_finite() && fn_ <= fx + 1e-4 * t * slope {
                accepted = Some((xn, fn_));
                break;
            }
            t *= 0.5;
        }
        let Some((xn, fn_)) = accepted else { break };
        let gn = numeric_gradient(f, &xn, 1e-6);
        let s = &xn - &x;
        let y = &gn - &g;
        let sy = s.dot(&y);
        if sy > 1e-300 {
            let rho = 1.0 / sy;
            let i = DMatrix::<f64>::identity(n, n);
            let left = &i - &s * y.transpose() * rho;
            let right = &i - &y * s.transpose() * rho;
            h = &left * &h * &right + &s * s.transpose() * rho;
        }
        x = xn;
        fx = fn_;
        g = gn;
    }
    x
}

/// Samples of the vector AR(1) process `w_k = A w_{k−1} + n_k`,
/// `n_k ~ N(0, σ²I)`, started from zero after a burn-in.
pub fn ar1_samples(rng: &mut ChaCha8Rng, n: usize, a: &DMatrix<f64>, sigma: f64) -> Vec<DVector<f64>> {
    let m = a.nrows();
    let mut w = DVector::zeros(m);
    for _ in 0..200 {
        w = a * &w + DVector::from_fn(m, |_, _| sigma * normal(rng));
    }
    (0..n)
        .map(|_| {
            w = a * &w + DVector::from_fn(m, |_, _| sigma * normal(rng));
            w.clone()
        })
        .collect()
}

/// Central-difference Jacobian of `f` with respect to the left perturbation
/// `T ← exp(δ^∧)·T`.
pub fn fd_left_jacobian(f: &dyn Fn(&Pose2) -> Vec<f64>, t: &Pose2, h: f64) -> DMatrix<f64> {
    let n = f(t).len();
    let mut j = DMatrix::zeros(n, 3);
    for i in 0..3 {
        let mut d = nalgebra::Vector3::zeros();
        d[i] = h;
        let p = f(&(Twist2::from_vector(d).exp() * *t));
        let m = f(&(Twist2::from_vector(-d).exp() * *t));
        for r in 0..n {
            j[(r, i)] = (p[r] - m[r]) / (2.0 * h);
        }
    }
    j
}

/// `W = LLᵀ` with `L = [[e^{x0}, 0], [x1, e^{x2}]]`.
fn w_from_log_cholesky(x: &[f64]) -> DMatrix<f64> {
    let l = DMatrix::from_row_slice(2, 2, &[x[0].exp(), 0.0, x[1], x[2].exp()]);
    &l * l.transpose()
}

/// `Σ_i h_i ½(r_iᵀWr_i − ln|W|) / Σ h_i` with `r_i = e_i + S e_{i−1}`, for
/// 2-vectors, parametrized by `S` (row-major) and the log-Cholesky factor
/// of `W`. `h[i − 1]` weights window `i`.
pub fn ar1_objective(e: &[DVector<f64>], h: &[f64], x: &DVector<f64>) -> f64 {
    let s = DMatrix::from_row_slice(2, 2, &x.as_slice()[0..4]);
    let w = w_from_log_cholesky(&x.as_slice()[4..7]);
    let logdet = 2.0 * (x[4] + x[6]);
    let mut total = 0.0;
    let mut h_sum = 0.0;
    for i in 1..e.len() {
        let r = &e[i] + &s * &e[i - 1];
        total += h[i - 1] * 0.5 * (r.dot(&(&w * &r)) - logdet);
        h_sum += h[i - 1];
    }
    total / h_sum
}

/// Numerical minimizer `(S, W)` of [`ar1_objective`].
pub fn ar1_minimize(e: &[DVector<f64>], h: &[f64]) -> (DMatrix<f64>, DMatrix<f64>) {
    let var = e.iter().map(|v| v.norm_squared()).sum::<f64>() / (2.0 * e.len() as f64);
    let l0 = (1.0 / var).sqrt().ln();
    let x0 = DVector::from_vec(vec![0.0, 0.0, 0.0, 0.0, l0, 0.0, l0]);
    let f = |x: &DVector<f64>| ar1_objective(e, h, x);
    let x = bfgs(&f, x0, 500, 1e-9);
    (
        DMatrix::from_row_slice(2, 2, &x.as_slice()[0..4]),
        w_from_log_cholesky(&x.as_slice()[4..7]),
    )
}

fn block_diag(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows() + b.nrows();
    let mut out = DMatrix::zeros(n, n);
    out.view_mut((0, 0), a.shape()).copy_from(a);
    out.view_mut((a.nrows(), a.nrows()), b.shape()).copy_from(b);
    out
}

/// A pose-measurement problem with random banded motion and measurement
/// models, plus a linearization point near the truth.
pub fn random_problem(rng: &mut ChaCha8Rng, k: usize, b_meas: usize, b_motion: usize) -> (EstimationProblem, Vec<Pose2>) {
    let dt = 0.1;
    let odometry: Vec<Odometry> = (0..k)
        .map(|_| Odometry::new(rng.random_range(0.1..1.0), rng.random_range(-0.8..0.8)))
        .collect();
    let mut truth = vec![random_pose(rng)];
    for o in &odometry[1..] {
        let prev = *truth.last().unwrap();
        truth.push(o.increment(dt) * prev);
    }
    let jitter = |rng: &mut ChaCha8Rng, t: &Pose2, s: f64| {
        Twist2::new(s * normal(rng), s * normal(rng), s * normal(rng)).exp() * *t
    };
    let poses: Vec<Option<Pose2>> = truth.iter().map(|t| Some(jitter(rng, t, 0.05))).collect();
    let lin: Vec<Pose2> = truth.iter().map(|t| jitter(rng, t, 0.1)).collect();
    let problem = EstimationProblem {
        dt,
        odometry,
        motion_noise: random_banded_model(rng, k - 1, 3, b_motion),
        measurements: Measurements::Poses {
            poses,
            noise: random_banded_model(rng, k, 3, b_meas),
        },
        initial_pose: None,
        initial_guess: None,
        config: SolverConfig::default(),
    };
    (problem, lin)
}

/// Dense `(JᵀΣ⁻¹J, JᵀΣ⁻¹e, ½eᵀΣ⁻¹e)` with `J` and `e` stacked explicitly.
pub fn dense_normal_equations(problem: &EstimationProblem, traj: &[Pose2]) -> (DMatrix<f64>, DVector<f64>, f64) {
    let k = traj.len();
    let rows = 3 * (k - 1) + 3 * k;
    let mut j = DMatrix::zeros(rows, 3 * k);
    let mut e = DVector::zeros(rows);
    for i in 1..k {
        let (err, jp, jc) = motion_error_jacobians(&traj[i - 1], &traj[i], &problem.odometry[i], problem.dt);
        let r = 3 * (i - 1);
        e.rows_mut(r, 3).copy_from(&err.vector());
        j.view_mut((r, 3 * (i - 1)), (3, 3)).copy_from(&jp);
        j.view_mut((r, 3 * i), (3, 3)).copy_from(&jc);
    }
    let Measurements::Poses { poses, noise } = &problem.measurements else {
        unreachable!()
    };
    for i in 0..k {
        let (err, jm) = measurement_error_jacobian(poses[i].as_ref().unwrap(), &traj[i]);
        let r = 3 * (k - 1) + 3 * i;
        e.rows_mut(r, 3).copy_from(&err.vector());
        j.view_mut((r, 3 * i), (3, 3)).copy_from(&jm);
    }
    let info_of = |m: &corrnoise::noise::BandedNoiseModel| {
        let s = m.dense_s();
        s.transpose() * m.dense_w() * s
    };
    let sigma_inv = block_diag(&info_of(&problem.motion_noise), &info_of(noise));
    let a = j.transpose() * &sigma_inv * &j;
    let g = j.transpose() * &sigma_inv * &e;
    let q = 0.5 * e.dot(&(&sigma_inv * &e));
    (a, g, q)
}

pub fn random_spd_band(rng: &mut ChaCha8Rng, n_blocks: usize, m: usize, b: usize) -> SymBandMatrix {
    // SᵀWS of a random banded model is SPD with exactly this block band.
    random_banded_model(rng, n_blocks, m, b).assemble_inverse_covariance()
}
