//! Gauss-Newton on `SE(2)^K` with block-banded normal equations.

use log::{debug, warn};
use nalgebra::{DMatrix, DVector, Matrix2, Matrix2x3, Matrix3, Vector2, Vector3};

use crate::banded::{takahashi_marginals, SymBandMatrix};
use crate::error::{Error, Result};
use crate::estimator::factors::{measurement_error_jacobian, motion_error_jacobians, point_error_jacobian};
use crate::estimator::problem::{EstimationProblem, Measurements, PointObservation};
use crate::estimator::result::EstimationResult;
use crate::linalg;
use crate::noise::BandedNoiseModel;
use crate::se2::{Pose2, Twist2};

const D: usize = 3;

fn fixed3(m: &DMatrix<f64>) -> Matrix3<f64> {
    Matrix3::from_iterator(m.iter().copied())
}

/// A banded noise model copied into fixed-size 3×3 blocks.
struct Factors3 {
    s: Vec<Vec<Matrix3<f64>>>,
    w: Vec<Matrix3<f64>>,
}

impl Factors3 {
    fn new(model: &BandedNoiseModel) -> Self {
        Factors3 {
            s: model.factors().iter().map(|f| f.s.iter().map(fixed3).collect()).collect(),
            w: model.factors().iter().map(|f| fixed3(&f.w)).collect(),
        }
    }
}

enum PreparedMeasurements<'a> {
    Poses { poses: &'a [Option<Pose2>], factors: Factors3 },
    Points { observations: &'a [Vec<PointObservation>], w: Matrix2<f64> },
}

/// Problem data rearranged for repeated linearization.
struct Prepared<'a> {
    problem: &'a EstimationProblem,
    motion: Factors3,
    meas: PreparedMeasurements<'a>,
    anchor: Option<(Pose2, Matrix3<f64>)>,
    bandwidth: usize,
    /// `−½ Σ ln|W|` over every factor; independent of the states.
    constant: f64,
}

impl<'a> Prepared<'a> {
    fn new(problem: &'a EstimationProblem) -> Result<Self> {
        problem.validate()?;
        let mut constant = -0.5 * problem.motion_noise.log_det_information()?;
        let meas = match &problem.measurements {
            Measurements::Poses { poses, noise } => {
                for (k, f) in noise.factors().iter().enumerate() {
                    if poses[k].is_some() {
                        constant -= 0.5 * linalg::spd_logdet(&f.w, "measurement W")?;
                    }
                }
                PreparedMeasurements::Poses {
                    poses,
                    factors: Factors3::new(noise),
                }
            }
            Measurements::Points {
                observations,
                information,
            } => {
                let n: usize = observations.iter().map(|o| o.len()).sum();
                constant -= 0.5 * n as f64 * information.determinant().ln();
                PreparedMeasurements::Points {
                    observations,
                    w: *information,
                }
            }
        };
        let anchor = problem.anchored().then(|| {
            let info = Matrix3::identity() * problem.config.anchor_information;
            constant -= 0.5 * info.determinant().ln();
            (problem.anchor_pose(), info)
        });
        Ok(Prepared {
            problem,
            motion: Factors3::new(&problem.motion_noise),
            meas,
            anchor,
            bandwidth: problem.information_bandwidth(),
            constant,
        })
    }

    fn k(&self) -> usize {
        self.problem.len()
    }

    /// Visits every whitened factor as `(r, W, [(state, ∂r/∂δ_state)])`,
    /// with 3-dimensional residuals. Point factors are handled separately.
    fn for_each_pose_factor<F>(&self, traj: &[Pose2], need_jac: bool, mut visit: F)
    where
        F: FnMut(&Vector3<f64>, &Matrix3<f64>, &[(usize, Matrix3<f64>)]),
    {
        let p = self.problem;
        let k_len = self.k();
        let mut blocks: Vec<(usize, Matrix3<f64>)> = Vec::new();

        // motion errors e_v[m], m = 1..K, linking states m−1 and m
        let motion: Vec<(Twist2, Matrix3<f64>, Matrix3<f64>)> = (1..k_len)
            .map(|m| motion_error_jacobians(&traj[m - 1], &traj[m], &p.odometry[m], p.dt))
            .collect();
        for q in 0..k_len.saturating_sub(1) {
            let m = q + 1;
            let s = &self.motion.s[q];
            let bq = s.len();
            let base = m - bq - 1;
            blocks.clear();
            blocks.extend((base..=m).map(|i| (i, Matrix3::zeros())));
            let (e0, jp0, jc0) = &motion[m - 1];
            let mut r = e0.0;
            if need_jac {
                blocks[m - 1 - base].1 += jp0;
                blocks[m - base].1 += jc0;
            }
            for (j0, sj) in s.iter().enumerate() {
                let mj = m - j0 - 1;
                let (e, jp, jc) = &motion[mj - 1];
                r += sj * e.0;
                if need_jac {
                    blocks[mj - 1 - base].1 += sj * jp;
                    blocks[mj - base].1 += sj * jc;
                }
            }
            visit(&r, &self.motion.w[q], &blocks);
        }

        if let PreparedMeasurements::Poses { poses, factors } = &self.meas {
            let errs: Vec<Option<(Twist2, Matrix3<f64>)>> = poses
                .iter()
                .zip(traj)
                .map(|(m, t)| m.as_ref().map(|m| measurement_error_jacobian(m, t)))
                .collect();
            for k in 0..k_len {
                let Some((e, jac)) = &errs[k] else { continue };
                let s = &factors.s[k];
                let bk = s.len();
                blocks.clear();
                let mut r = e.0;
                if need_jac {
                    blocks.extend((k - bk..=k).map(|i| (i, Matrix3::zeros())));
                    blocks[bk].1 = *jac;
                }
                for (j0, sj) in s.iter().enumerate() {
                    let i = k - j0 - 1;
                    // gaps only occur with b = 0, so every windowed error exists
                    let (ei, ji) = errs[i].as_ref().expect("gap inside a correlated window");
                    r += sj * ei.0;
                    if need_jac {
                        blocks[i - (k - bk)].1 = sj * ji;
                    }
                }
                visit(&r, &factors.w[k], &blocks);
            }
        }

        if let Some((mean, info)) = &self.anchor {
            let (e, jac) = measurement_error_jacobian(mean, &traj[0]);
            visit(&e.0, info, &[(0, jac)]);
        }
    }

    fn for_each_point_factor<F>(&self, traj: &[Pose2], mut visit: F)
    where
        F: FnMut(usize, &Vector2<f64>, &Matrix2x3<f64>, &Matrix2<f64>),
    {
        if let PreparedMeasurements::Points { observations, w } = &self.meas {
            for (k, obs) in observations.iter().enumerate() {
                for o in obs {
                    let (e, j) = point_error_jacobian(&o.observed, &o.landmark, &traj[k]);
                    visit(k, &e, &j, w);
                }
            }
        }
    }

    /// `½ Σ rᵀWr`, the state-dependent part of the objective.
    fn quadratic_cost(&self, traj: &[Pose2]) -> f64 {
        let mut quad = 0.0;
        self.for_each_pose_factor(traj, false, |r, w, _| quad += 0.5 * r.dot(&(w * r)));
        self.for_each_point_factor(traj, |_, e, _, w| quad += 0.5 * e.dot(&(w * e)));
        quad
    }

    fn linearize(&self, traj: &[Pose2]) -> NormalEquations {
        let k_len = self.k();
        let mut a = SymBandMatrix::zeros_blocked(k_len, D, self.bandwidth);
        let mut g = DVector::zeros(D * k_len);
        let mut quad = 0.0;
        let mut wj: Vec<Matrix3<f64>> = Vec::new();
        self.for_each_pose_factor(traj, true, |r, w, blocks| {
            let wr = w * r;
            quad += 0.5 * r.dot(&wr);
            wj.clear();
            wj.extend(blocks.iter().map(|(_, j)| w * j));
            for (pi, (p, jp)) in blocks.iter().enumerate() {
                let mut gp = g.fixed_rows_mut::<3>(p * D);
                gp += jp.tr_mul(&wr);
                // blocks are sorted by state, so q ≤ p below
                for (qi, (q, _)) in blocks.iter().enumerate().take(pi + 1) {
                    a.add_block(p * D, q * D, &jp.tr_mul(&wj[qi]));
                }
            }
        });
        self.for_each_point_factor(traj, |k, e, j, w| {
            let wr = w * e;
            quad += 0.5 * e.dot(&wr);
            let mut gk = g.fixed_rows_mut::<3>(k * D);
            gk += j.tr_mul(&wr);
            a.add_block(k * D, k * D, &j.tr_mul(&(w * j)));
        });
        NormalEquations { a, g, quadratic_cost: quad }
    }
}

/// Normal equations `A δ = −g` at a linearization point, with
/// `A = JᵀΣ⁻¹J`, `g = JᵀΣ⁻¹e` and `½ eᵀΣ⁻¹e`.
#[derive(Clone, Debug)]
pub struct NormalEquations {
    pub a: SymBandMatrix,
    pub g: DVector<f64>,
    pub quadratic_cost: f64,
}

/// Assembles the banded normal equations of the problem at `traj`.
pub fn linearize(problem: &EstimationProblem, traj: &[Pose2]) -> Result<NormalEquations> {
    let prep = Prepared::new(problem)?;
    check_trajectory(problem, traj)?;
    Ok(prep.linearize(traj))
}

/// Full objective `½ eᵀΣ⁻¹e − ½ ln|Σ⁻¹|` at `traj`.
pub fn objective(problem: &EstimationProblem, traj: &[Pose2]) -> Result<f64> {
    let prep = Prepared::new(problem)?;
    check_trajectory(problem, traj)?;
    Ok(prep.quadratic_cost(traj) + prep.constant)
}

fn check_trajectory(problem: &EstimationProblem, traj: &[Pose2]) -> Result<()> {
    if traj.len() != problem.len() {
        return Err(Error::DimensionMismatch(format!(
            "trajectory has {} poses for {} states",
            traj.len(),
            problem.len()
        )));
    }
    if traj.iter().any(|t| !t.is_finite()) {
        return Err(Error::InvalidArgument("non-finite pose in trajectory".into()));
    }
    Ok(())
}

/// Applies `T_k ← exp(δ_k^∧)·T_k` to every state.
pub fn retract(traj: &[Pose2], delta: &DVector<f64>) -> Vec<Pose2> {
    traj.iter()
        .enumerate()
        .map(|(k, t)| Twist2::from_vector(delta.fixed_rows::<3>(k * D).into_owned()).exp() * *t)
        .collect()
}

/// Solves the MAP problem by Gauss-Newton with step halving, then recovers
/// the marginal covariances from the final linearization.
pub fn gauss_newton(problem: &EstimationProblem) -> Result<EstimationResult> {
    let prep = Prepared::new(problem)?;
    let cfg = &problem.config;
    let mut traj = problem.initial_trajectory()?;
    check_trajectory(problem, &traj)?;

    let mut lin = prep.linearize(&traj);
    let mut cost_trace = vec![lin.quadratic_cost + prep.constant];
    let mut converged = false;
    let mut iterations = 0;

    while iterations < cfg.max_iterations {
        iterations += 1;
        let factor = lin.a.cholesky_jittered()?;
        let delta = -factor.solve(&lin.g);
        let old = lin.quadratic_cost;

        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..=cfg.max_halvings {
            let step = &delta * alpha;
            let candidate = retract(&traj, &step);
            let c = prep.quadratic_cost(&candidate);
            if c.is_finite() && c <= old {
                accepted = Some((candidate, c, step.norm()));
                break;
            }
            alpha *= 0.5;
        }
        let Some((candidate, new_cost, step_norm)) = accepted else {
            debug!("line search found no decrease at iteration {iterations}; stopping");
            converged = true;
            break;
        };
        traj = candidate;
        lin = prep.linearize(&traj);
        cost_trace.push(new_cost + prep.constant);

        let rel = if old > 0.0 { (old - new_cost) / old } else { 0.0 };
        debug!("GN iteration {iterations}: cost {new_cost:.9e}, step {step_norm:.3e}, alpha {alpha}");
        if rel < cfg.relative_cost_tol || step_norm < cfg.step_tol {
            converged = true;
            break;
        }
    }

    if !converged {
        warn!("Gauss-Newton hit the iteration limit ({})", cfg.max_iterations);
        return Err(Error::NotConverged {
            iterations,
            final_cost: *cost_trace.last().unwrap_or(&f64::NAN),
            cost_trace,
        });
    }

    let factor = lin.a.cholesky_jittered()?;
    let marginals = takahashi_marginals(&factor, D).iter().map(fixed3).collect();
    Ok(EstimationResult {
        trajectory: traj,
        information: lin.a,
        marginals,
        cost_trace,
        iterations,
    })
}
