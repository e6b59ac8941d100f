use nalgebra::{Matrix2, Matrix4, Vector2, Vector4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::dataset::{pose_to_record, LandmarkObservation, Sequence, TimestepRecord};
use crate::error::{Error, Result};
use crate::estimator::{propagate, Odometry};
use crate::preprocess::{extract_feature, svd_pose_fit};
use crate::se2::{wrap_angle, Pose2, Twist2};
use crate::sim::config::{SimConfig, TrajectoryConfig};
use crate::sim::world::{visible_landmarks, World};

/// Which sequence of a trial a random stream belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SequenceKind {
    Train = 0,
    Test = 1,
    /// Trial-level draws shared by both sequences (the world).
    Shared = 2,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Purpose {
    World = 0,
    Trajectory = 1,
    Odometry = 2,
    Measurement = 3,
}

/// ChaCha stream for `(trial, sequence, purpose, landmark)` under the
/// master seed. Streams never overlap, so trials can be generated in any
/// order or in parallel.
fn stream(seed: u64, trial: u64, kind: SequenceKind, purpose: Purpose, landmark: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let id = (trial << 24) | ((kind as u64) << 20) | ((purpose as u64) << 16) | (landmark & 0xffff);
    rng.set_stream(id);
    rng
}

fn normal<R: Rng>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

/// Symmetric PSD square root.
fn psd_sqrt(m: &Matrix2<f64>) -> Matrix2<f64> {
    let eig = m.symmetric_eigen();
    let d = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    eig.eigenvectors * Matrix2::from_diagonal(&d) * eig.eigenvectors.transpose()
}

/// Stationary covariance `V = S′VS′ᵀ + R′` of the AR(1) process.
pub fn stationary_covariance(gain: &Matrix2<f64>, innovation: &Matrix2<f64>) -> Result<Matrix2<f64>> {
    // vec(V) = (I − S′⊗S′)⁻¹ vec(R′), column-major vec
    let kron = Matrix4::from_fn(|r, c| gain[(r % 2, c % 2)] * gain[(r / 2, c / 2)]);
    let lhs = Matrix4::identity() - kron;
    let rhs = Vector4::new(innovation[(0, 0)], innovation[(1, 0)], innovation[(0, 1)], innovation[(1, 1)]);
    let v = lhs
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Config("AR gain has a unit-modulus eigenvalue".into()))?;
    let m = Matrix2::new(v[0], v[2], v[1], v[3]);
    Ok((m + m.transpose()) * 0.5)
}

/// Groundtruth poses and reported odometry of one sequence.
pub struct TrajectorySample {
    pub poses: Vec<Pose2>,
    pub odometry: Vec<Odometry>,
}

/// Drives the robot along the configured path. `traj_rng` draws the path's
/// random phase, `odom_rng` the odometry corruption.
pub fn generate_trajectory<R: Rng>(cfg: &SimConfig, length: usize, traj_rng: &mut R, odom_rng: &mut R) -> TrajectorySample {
    let dt = cfg.dt;
    let noise = &cfg.odometry_noise;
    let mut poses = Vec::with_capacity(length);
    let mut odometry = Vec::with_capacity(length);

    let mut command: Box<dyn FnMut(usize, &Pose2) -> (f64, f64)> = match cfg.trajectory.clone() {
        TrajectoryConfig::Stationary { pose } => {
            poses.push(Pose2::from_world_pose(pose[0], pose[1], pose[2]));
            Box::new(|_, _| (0.0, 0.0))
        }
        TrajectoryConfig::Circle { center, radius, speed } => {
            poses.push(Pose2::from_world_pose(
                center[0] + radius,
                center[1],
                std::f64::consts::FRAC_PI_2,
            ));
            let omega = if radius > 0.0 { speed / radius } else { 0.0 };
            Box::new(move |_, _| (speed, omega))
        }
        TrajectoryConfig::Lissajous {
            center,
            amplitude,
            frequency,
            lookahead,
            min_speed,
            max_speed,
            max_turn_rate,
            speed_gain,
            turn_gain,
        } => {
            let phase = [
                traj_rng.random_range(0.0..std::f64::consts::TAU),
                traj_rng.random_range(0.0..std::f64::consts::TAU),
            ];
            let reference = move |t: f64| {
                Vector2::new(
                    center[0] + amplitude[0] * (frequency[0] * t + phase[0]).sin(),
                    center[1] + amplitude[1] * (frequency[1] * t + phase[1]).sin(),
                )
            };
            let start = reference(0.0);
            let ahead = reference(lookahead) - start;
            poses.push(Pose2::from_world_pose(start[0], start[1], ahead[1].atan2(ahead[0])));
            Box::new(move |k, pose| {
                let (x, y, heading) = pose.world_pose();
                let d = reference(k as f64 * dt + lookahead) - Vector2::new(x, y);
                let err = wrap_angle(d[1].atan2(d[0]) - heading);
                let v = (speed_gain * d.norm() * err.cos().max(0.0)).clamp(min_speed, max_speed);
                let w = (turn_gain * err).clamp(-max_turn_rate, max_turn_rate);
                (v, w)
            })
        }
    };

    for k in 0..length {
        let prev = if k == 0 { poses[0] } else { poses[k - 1] };
        let (v, w) = command(k, &prev);
        let slip = noise.sigma_lateral * normal(odom_rng);
        let reported = Odometry::new(v + noise.sigma_v * normal(odom_rng), w + noise.sigma_omega * normal(odom_rng));
        odometry.push(reported);
        if k > 0 {
            poses.push((Twist2::new(-v, -slip, -w) * dt).exp() * prev);
        }
    }
    TrajectorySample { poses, odometry }
}

/// Landmark-point measurements of one sequence.
pub struct MeasurementSample {
    /// Per timestep: `(landmark id, noisy body-frame point)` for visible
    /// landmarks.
    pub observations: Vec<Vec<(usize, Vector2<f64>)>>,
    /// The AR(1) noise state `w_k` of every landmark, visible or not.
    pub noise: Vec<Vec<Vector2<f64>>>,
}

/// `y_k = g(x_k, ℓ) + a(r)·w_k` with `w_k = S′w_{k−1} + n` tracked per
/// landmark. The process keeps running while a landmark is out of view.
pub fn simulate_measurements(
    poses: &[Pose2],
    world: &World,
    cfg: &SimConfig,
    trial: u64,
    kind: SequenceKind,
) -> Result<MeasurementSample> {
    let gain = cfg.ar_gain_matrix();
    let innov_sqrt = psd_sqrt(&cfg.innovation_matrix());
    let stat_sqrt = psd_sqrt(&stationary_covariance(&gain, &cfg.innovation_matrix())?);
    let n_lm = world.landmarks.len();

    let mut rngs: Vec<ChaCha8Rng> = (0..n_lm)
        .map(|j| stream(cfg.seed, trial, kind, Purpose::Measurement, j as u64))
        .collect();
    let draw = |rng: &mut ChaCha8Rng| Vector2::new(normal(rng), normal(rng));
    let mut state: Vec<Vector2<f64>> = rngs.iter_mut().map(|r| stat_sqrt * draw(r)).collect();

    let mut observations = Vec::with_capacity(poses.len());
    let mut noise = Vec::with_capacity(poses.len());
    for (k, pose) in poses.iter().enumerate() {
        if k > 0 {
            for (w, rng) in state.iter_mut().zip(rngs.iter_mut()) {
                *w = gain * *w + innov_sqrt * draw(rng);
            }
        }
        let obs = visible_landmarks(pose, world)
            .into_iter()
            .map(|(id, p)| {
                let scale = 1.0 + cfg.range_noise_gain * (p.norm() / world.max_range).powi(2);
                (id, p + state[id] * scale)
            })
            .collect();
        observations.push(obs);
        noise.push(state.clone());
    }
    Ok(MeasurementSample { observations, noise })
}

/// Dataset records with SVD pseudomeasurements and features computed from
/// the noisy observations. Timesteps with fewer than two usable landmarks
/// carry no pseudomeasurement.
pub fn build_sequence(world: &World, traj: &TrajectorySample, meas: &MeasurementSample, dt: f64) -> Sequence {
    let records = traj
        .poses
        .iter()
        .zip(&traj.odometry)
        .zip(&meas.observations)
        .enumerate()
        .map(|(k, ((pose, odom), obs))| {
            let body: Vec<Vector2<f64>> = obs.iter().map(|(_, p)| *p).collect();
            let map: Vec<Vector2<f64>> = obs.iter().map(|(id, _)| world.landmarks[*id]).collect();
            let pseudo = svd_pose_fit(&map, &body).ok();
            TimestepRecord {
                k: k + 1,
                t: k as f64 * dt,
                odom: [odom.v, odom.omega],
                landmarks: obs
                    .iter()
                    .map(|(id, p)| LandmarkObservation {
                        id: *id,
                        x_body: p[0],
                        y_body: p[1],
                    })
                    .collect(),
                gt_pose: Some(pose_to_record(pose)),
                pseudo_pose: pseudo.as_ref().map(pose_to_record),
                feature: Some(extract_feature(&body).0),
            }
        })
        .collect();
    Sequence { dt, records }
}

/// One simulated sequence of a trial.
pub fn simulate_sequence(cfg: &SimConfig, world: &World, trial: u64, kind: SequenceKind, length: usize) -> Result<Sequence> {
    let mut traj_rng = stream(cfg.seed, trial, kind, Purpose::Trajectory, 0);
    let mut odom_rng = stream(cfg.seed, trial, kind, Purpose::Odometry, 0);
    let traj = generate_trajectory(cfg, length, &mut traj_rng, &mut odom_rng);
    let meas = simulate_measurements(&traj.poses, world, cfg, trial, kind)?;
    Ok(build_sequence(world, &traj, &meas, cfg.dt))
}

/// A trial: its world and independent training and test sequences.
#[derive(Clone, Debug)]
pub struct Trial {
    pub index: u64,
    pub world: World,
    pub train: Sequence,
    pub test: Sequence,
}

pub fn simulate_trial(cfg: &SimConfig, index: u64) -> Result<Trial> {
    cfg.validate()?;
    let mut world_rng = stream(cfg.seed, index, SequenceKind::Shared, Purpose::World, 0);
    let world = World::jittered_grid(&cfg.world, &mut world_rng)?;
    let train = simulate_sequence(cfg, &world, index, SequenceKind::Train, cfg.train_length)?;
    let test = simulate_sequence(cfg, &world, index, SequenceKind::Test, cfg.test_length)?;
    Ok(Trial {
        index,
        world,
        train,
        test,
    })
}

/// `n_trials` trials generated in parallel, returned in index order.
pub fn run_trials(cfg: &SimConfig, n_trials: usize) -> Result<Vec<Trial>> {
    if n_trials == 0 {
        return Err(Error::InvalidArgument("at least one trial is required".into()));
    }
    (0..n_trials as u64).into_par_iter().map(|i| simulate_trial(cfg, i)).collect()
}

/// Dead-reckons reported odometry from `start`.
pub fn dead_reckon(start: &Pose2, odometry: &[Odometry], dt: f64) -> Vec<Pose2> {
    let mut out = Vec::with_capacity(odometry.len());
    out.push(*start);
    for k in 1..odometry.len() {
        let next = propagate(&out[k - 1], &odometry[k], dt);
        out.push(next);
    }
    out
}
