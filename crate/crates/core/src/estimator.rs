//! EKF over per-particle boundary stiffness.
//!
//! Predict applies a topology event's mean shift and noise injection;
//! update stacks multiple-shooting samples of past transitions, each
//! re-simulated from its observed reference state at the current mean.

use crate::jacobian::{fd_step_jacobian, JacobianError};
use crate::mesh::{dilate_mask, Mesh, ParticleMask};
use crate::sim::{SimError, SimState, Simulator};
use crate::{DMat, DVec, Real, Vec3};
use rand::Rng;
use thiserror::Error;

/// Entropy reported when the covariance determinant collapses to zero.
pub const ENTROPY_FLOOR: f64 = -1e9;

#[derive(Debug, Error)]
pub enum EstimatorError {
    #[error(transparent)]
    Jacobian(#[from] JacobianError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("multiple shooting sample {sample} outside recorded history")]
    SampleOutOfRange { sample: usize },
}

/// Gaussian belief over the boundary stiffness vector.
#[derive(Debug, Clone)]
pub struct BoundaryBelief<T> {
    pub mean: DVec<T>,
    pub covariance: DMat<T>,
    pub time_index: usize,
}

impl<T: Real> BoundaryBelief<T> {
    pub fn new(mean: DVec<T>, covariance: DMat<T>) -> Self {
        BoundaryBelief {
            mean,
            covariance,
            time_index: 0,
        }
    }

    /// Isotropic initial belief.
    pub fn uniform(n: usize, mean: T, variance: T) -> Self {
        BoundaryBelief::new(
            DVec::from_element(n, mean),
            DMat::identity(n, n) * variance,
        )
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn clamp_mean(&mut self) {
        for m in self.mean.iter_mut() {
            if *m < T::zero() {
                *m = T::zero();
            }
        }
    }

    pub fn symmetrize(&mut self) {
        let half = T::from_f64_lossy(0.5);
        let sym = (&self.covariance + self.covariance.transpose()) * half;
        self.covariance = sym;
    }
}

/// Observation and motion noise magnitudes.
#[derive(Debug, Clone, Copy)]
pub struct NoiseConfig<T> {
    /// Isotropic observation variance, `R = alpha I`.
    pub obs_variance: T,
    /// Motion variance added every predict step without an event.
    pub base_motion_variance: T,
    /// Motion variance injected near a topology-changing region.
    pub event_motion_variance: T,
}

impl<T: Real> Default for NoiseConfig<T> {
    fn default() -> Self {
        NoiseConfig {
            obs_variance: T::from_f64_lossy(1e-6),
            base_motion_variance: T::zero(),
            event_motion_variance: T::from_f64_lossy(0.05),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventKind {
    Cut,
    Suture,
}

/// A cut or suture: a mean shift over a region plus localized noise.
#[derive(Debug, Clone)]
pub struct TopologyEvent<T> {
    pub kind: EventKind,
    pub region: Vec<usize>,
    pub delta_b: DVec<T>,
    /// Diagonal of the motion covariance `W`.
    pub noise_diag: DVec<T>,
}

fn event_noise_diag<T: Real>(
    mesh: &Mesh<T>,
    region: &[usize],
    noise: &NoiseConfig<T>,
) -> DVec<T> {
    let n = mesh.particle_count();
    let near = dilate_mask(mesh, &ParticleMask::from_indices(n, region), 1);
    DVec::from_fn(n, |i, _| {
        if near.0[i] {
            noise.event_motion_variance
        } else {
            noise.base_motion_variance
        }
    })
}

/// Cut: drives the mean to zero over the region and injects noise nearby.
pub fn make_cut_event<T: Real>(
    mesh: &Mesh<T>,
    region: &[usize],
    belief: &BoundaryBelief<T>,
    noise: &NoiseConfig<T>,
) -> TopologyEvent<T> {
    assert!(!region.is_empty(), "cut region must be non-empty");
    let mut delta_b = DVec::zeros(belief.dim());
    for &i in region {
        delta_b[i] = -belief.mean[i];
    }
    TopologyEvent {
        kind: EventKind::Cut,
        region: region.to_vec(),
        delta_b,
        noise_diag: event_noise_diag(mesh, region, noise),
    }
}

/// Suture: raises the mean by `b_suture` over the region.
pub fn make_suture_event<T: Real>(
    mesh: &Mesh<T>,
    region: &[usize],
    b_suture: T,
    n: usize,
    noise: &NoiseConfig<T>,
) -> TopologyEvent<T> {
    assert!(!region.is_empty(), "suture region must be non-empty");
    assert!(b_suture >= T::zero());
    let mut delta_b = DVec::zeros(n);
    for &i in region {
        delta_b[i] = b_suture;
    }
    TopologyEvent {
        kind: EventKind::Suture,
        region: region.to_vec(),
        delta_b,
        noise_diag: event_noise_diag(mesh, region, noise),
    }
}

/// Prediction step: mean shift plus noise injection.
pub fn ekf_predict<T: Real>(
    belief: &BoundaryBelief<T>,
    event: Option<&TopologyEvent<T>>,
    noise: &NoiseConfig<T>,
) -> BoundaryBelief<T> {
    let n = belief.dim();
    let mut out = belief.clone();
    match event {
        Some(e) => {
            out.mean += &e.delta_b;
            for i in 0..n {
                out.covariance[(i, i)] += e.noise_diag[i];
            }
        }
        None => {
            if noise.base_motion_variance > T::zero() {
                for i in 0..n {
                    out.covariance[(i, i)] += noise.base_motion_variance;
                }
            }
        }
    }
    out.clamp_mean();
    out.time_index += 1;
    out
}

/// Observed reference states and the actions between them. `states[i]`
/// evolves to `states[i + 1]` under `actions[i]`.
#[derive(Debug, Clone, Default)]
pub struct ObservationLog<T> {
    pub states: Vec<SimState<T>>,
    pub actions: Vec<Vec3<T>>,
}

impl<T: Real> ObservationLog<T> {
    pub fn start(initial: SimState<T>) -> Self {
        ObservationLog {
            states: vec![initial],
            actions: vec![],
        }
    }

    pub fn push_transition(&mut self, action: Vec3<T>, next: SimState<T>) {
        self.actions.push(action);
        self.states.push(next);
    }

    /// Number of recorded transitions.
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    /// Drops history before a topology change, keeping the latest state.
    pub fn rebase(&mut self) {
        if let Some(last) = self.states.pop() {
            self.states = vec![last];
            self.actions.clear();
        }
    }
}

/// Samples for the multiple-shooting update: always contains `t`, plus up
/// to `k - 1` draws without replacement from `[t_c, t - 1]`.
pub fn sample_timesteps<T: Rng>(t_c: usize, t: usize, k: usize, rng: &mut T) -> Vec<usize> {
    assert!(t >= t_c, "window end before start");
    assert!(k >= 1);
    let mut pool: Vec<usize> = (t_c..t).collect();
    let take = (k - 1).min(pool.len());
    let mut picked = Vec::with_capacity(take + 1);
    for _ in 0..take {
        let idx = rng.gen_range(0..pool.len());
        picked.push(pool.swap_remove(idx));
    }
    picked.push(t);
    picked.sort_unstable();
    picked
}

#[derive(Debug, Clone, Copy)]
pub struct UpdateOptions<T> {
    /// Step for the finite-difference observation Jacobian.
    pub fd_eps: T,
    /// Joseph-form covariance update for extra numerical robustness.
    pub joseph: bool,
}

impl<T: Real> Default for UpdateOptions<T> {
    fn default() -> Self {
        UpdateOptions {
            fd_eps: T::from_f64_lossy(1e-5),
            joseph: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct EkfUpdate<T> {
    pub belief: BoundaryBelief<T>,
    /// Set when the residual covariance was numerically singular and the
    /// prior was returned unchanged.
    pub aborted: bool,
}

/// Kalman gain `K = Sigma J' (J Sigma J' + alpha I)^-1`, computed through
/// the equivalent n x n system `(J'J Sigma + alpha I) X = J'`.
pub fn kalman_gain<T: Real>(sigma: &DMat<T>, j: &DMat<T>, alpha: T) -> Option<DMat<T>> {
    let n = sigma.nrows();
    let jt = j.transpose();
    let a = &jt * j * sigma + DMat::identity(n, n) * alpha;
    let solved = a.lu().solve(&jt)?;
    let k = sigma * solved;
    k.iter().all(|v| v.is_finite()).then_some(k)
}

/// Multiple-shooting EKF update (reduces to the single-step update when
/// `samples == [t]`). `belief` is the predicted prior.
pub fn ekf_update<T: Real>(
    belief: &BoundaryBelief<T>,
    sim: &Simulator<T>,
    log: &ObservationLog<T>,
    samples: &[usize],
    noise: &NoiseConfig<T>,
    opts: &UpdateOptions<T>,
) -> Result<EkfUpdate<T>, EstimatorError> {
    let n = belief.dim();
    let rows = 3 * sim.particle_count();
    let mut j_stack = DMat::zeros(rows * samples.len(), n);
    let mut residual = DVec::zeros(rows * samples.len());

    for (s, &m) in samples.iter().enumerate() {
        if m >= log.len() {
            return Err(EstimatorError::SampleOutOfRange { sample: m });
        }
        let x_ref = &log.states[m];
        let u = &log.actions[m];
        let pred = sim.step(x_ref, u, &belief.mean)?;
        let j = fd_step_jacobian(sim, x_ref, u, &belief.mean, opts.fd_eps)?;
        j_stack.view_mut((s * rows, 0), (rows, n)).copy_from(&j);
        let y = log.states[m + 1].flatten() - pred.flatten();
        residual.rows_mut(s * rows, rows).copy_from(&y);
    }

    let gain = match kalman_gain(&belief.covariance, &j_stack, noise.obs_variance) {
        Some(k) => k,
        None => {
            log::warn!("residual covariance singular; EKF update aborted");
            return Ok(EkfUpdate {
                belief: belief.clone(),
                aborted: true,
            });
        }
    };

    let mut out = belief.clone();
    out.mean = &belief.mean + &gain * residual;
    let kj = &gain * &j_stack;
    let i_kj = DMat::identity(n, n) - &kj;
    out.covariance = if opts.joseph {
        &i_kj * &belief.covariance * i_kj.transpose()
            + &gain * gain.transpose() * noise.obs_variance
    } else {
        &i_kj * &belief.covariance
    };
    out.clamp_mean();
    out.symmetrize();
    Ok(EkfUpdate {
        belief: out,
        aborted: false,
    })
}

/// Differential entropy up to its constant: `ln det Sigma`, with a large
/// negative clamp when the determinant is not positive.
pub fn entropy<T: Real>(belief: &BoundaryBelief<T>) -> T {
    ln_det_psd(&belief.covariance)
}

pub fn ln_det_psd<T: Real>(m: &DMat<T>) -> T {
    let eig = m.clone().symmetric_eigen();
    let mut sum = T::zero();
    for &l in eig.eigenvalues.iter() {
        if l <= T::zero() {
            return T::from_f64_lossy(ENTROPY_FLOOR);
        }
        sum += l.ln();
    }
    sum
}

/// Symmetric PSD square root via eigendecomposition, negative eigenvalues
/// clipped at zero.
pub fn symmetric_sqrt<T: Real>(m: &DMat<T>) -> DMat<T> {
    let eig = m.clone().symmetric_eigen();
    let n = m.nrows();
    let mut scaled = eig.eigenvectors.clone();
    for c in 0..n {
        let l = eig.eigenvalues[c].max(T::zero()).sqrt();
        for r in 0..n {
            scaled[(r, c)] *= l;
        }
    }
    &scaled * eig.eigenvectors.transpose()
}

/// Posterior covariance determinant through the singular values of
/// `J Sigma^(1/2)`: `det(Sigma) prod_i (1 - l_i^2 / (l_i^2 + alpha))`.
pub fn entropy_product_form<T: Real>(sigma: &DMat<T>, j: &DMat<T>, alpha: T) -> T {
    let det: T = sigma
        .clone()
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .fold(T::one(), |acc, &l| acc * l);
    let root = symmetric_sqrt(sigma);
    let a = j * root;
    let svd = a.svd(false, false);
    let factor = svd
        .singular_values
        .iter()
        .fold(T::one(), |acc, &l| acc * (T::one() - l * l / (l * l + alpha)));
    det * factor
}

/// Log form of [`entropy_product_form`], safe against underflow on large
/// beliefs: `ln det Sigma + sum_i ln(alpha / (l_i^2 + alpha))`.
pub fn entropy_product_form_log<T: Real>(sigma: &DMat<T>, j: &DMat<T>, alpha: T) -> T {
    let base = ln_det_psd(sigma);
    if base <= T::from_f64_lossy(ENTROPY_FLOOR) {
        return base;
    }
    let root = symmetric_sqrt(sigma);
    let a = j * root;
    let svd = a.svd(false, false);
    let extra = svd
        .singular_values
        .iter()
        .fold(T::zero(), |acc, &l| acc + (alpha / (l * l + alpha)).ln());
    base + extra
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::build_grid_mesh;
    use crate::sim::{apply_grasp, ConstraintSet, Grasp, GraspSpring, SolverConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_psd(n: usize, rng: &mut ChaCha8Rng) -> DMat<f64> {
        let a = DMat::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        &a * a.transpose() + DMat::identity(n, n) * 0.1
    }

    #[test]
    fn predict_without_event_is_identity() {
        let belief = BoundaryBelief::uniform(5, 1e-4, 0.1);
        let noise = NoiseConfig::default();
        let out = ekf_predict(&belief, None, &noise);
        assert_eq!(out.mean, belief.mean);
        assert_eq!(out.covariance, belief.covariance);
    }

    #[test]
    fn cut_event_zeroes_region_mean() {
        let mesh: Mesh<f64> = build_grid_mesh(3, 3, 0.1).unwrap();
        let mut belief = BoundaryBelief::uniform(9, 0.0, 0.1);
        belief.mean[0] = 0.3;
        belief.mean[2] = 0.2;
        let noise = NoiseConfig::default();
        let event = make_cut_event(&mesh, &[0, 2], &belief, &noise);
        let out = ekf_predict(&belief, Some(&event), &noise);
        assert_eq!(out.mean[0], 0.0);
        assert_eq!(out.mean[2], 0.0);
        assert_eq!(out.mean[1], 0.0);
        // Noise sits on the 1-hop dilated region; particle 7 is two hops
        // from both corners and stays at baseline.
        assert!(out.covariance[(0, 0)] > belief.covariance[(0, 0)]);
        assert_eq!(out.covariance[(7, 7)], belief.covariance[(7, 7)]);
    }

    #[test]
    fn cut_on_zero_mean_only_injects_noise() {
        let mesh: Mesh<f64> = build_grid_mesh(3, 3, 0.1).unwrap();
        let belief = BoundaryBelief::uniform(9, 0.0, 0.1);
        let noise = NoiseConfig::default();
        let event = make_cut_event(&mesh, &[0], &belief, &noise);
        assert!(event.delta_b.iter().all(|&d| d == 0.0));
        assert!(event.noise_diag[0] > 0.0);
    }

    #[test]
    fn event_noise_strictly_increases_entropy() {
        let mesh: Mesh<f64> = build_grid_mesh(3, 3, 0.1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let belief = BoundaryBelief::new(DVec::zeros(9), random_psd(9, &mut rng));
            let noise = NoiseConfig {
                event_motion_variance: rng.gen_range(0.01..0.2),
                base_motion_variance: rng.gen_range(0.001..0.01),
                ..NoiseConfig::default()
            };
            let event = make_suture_event(&mesh, &[4], 0.1, 9, &noise);
            let before = entropy(&belief);
            let after = entropy(&ekf_predict(&belief, Some(&event), &noise));
            assert!(after > before);
        }
    }

    #[test]
    fn sample_timesteps_edge_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(sample_timesteps(0, 7, 1, &mut rng), vec![7]);
        assert_eq!(sample_timesteps(5, 5, 4, &mut rng), vec![5]);

        let mut r1 = ChaCha8Rng::seed_from_u64(42);
        let mut r2 = ChaCha8Rng::seed_from_u64(42);
        let a = sample_timesteps(0, 10, 3, &mut r1);
        let b = sample_timesteps(0, 10, 3, &mut r2);
        assert_eq!(a, b);
        assert_eq!(a.len(), 3);
        assert!(a.contains(&10));
        assert!(a.iter().all(|&m| m <= 10));
        let mut dedup = a.clone();
        dedup.dedup();
        assert_eq!(dedup, a, "samples drawn without replacement");
    }

    fn two_spring_sim(k_a: f64) -> Simulator<f64> {
        Simulator {
            constraints: ConstraintSet {
                edges: vec![],
                bending: vec![],
                stiffness_mesh: 1.0,
                grasp: Some(Grasp {
                    springs: vec![GraspSpring { particle: 0, rest_length: 0.0 }],
                    stiffness: k_a,
                }),
                boundary_anchors: vec![Vec3::zeros()],
            },
            cfg: SolverConfig {
                max_iterations: 200,
                residual_tolerance: 1e-12,
                dt: 1.0,
                gravity: None,
                ground_plane_z: None,
            },
        }
    }

    #[test]
    fn scalar_update_matches_textbook_kalman() {
        let sim = two_spring_sim(1.0);
        let u = Vec3::new(0.2, 0.0, 0.0);
        let b_true = DVec::from_element(1, 0.4);
        let mut log = ObservationLog::start(SimState::new(vec![Vec3::zeros()]));
        let mut state = log.states[0].clone();
        for _ in 0..5 {
            state = sim.step(&state, &u, &b_true).unwrap();
            log.push_transition(u, state.clone());
        }

        let prior = BoundaryBelief::uniform(1, 0.1, 0.05);
        let noise = NoiseConfig::default();
        let opts = UpdateOptions::default();
        let m = log.len() - 1;
        let out = ekf_update(&prior, &sim, &log, &[m], &noise, &opts).unwrap();
        assert!(!out.aborted);

        // Recompute with explicit scalar algebra from the same J and residual.
        let j = fd_step_jacobian(&sim, &log.states[m], &u, &prior.mean, opts.fd_eps).unwrap();
        let pred = sim.step(&log.states[m], &u, &prior.mean).unwrap();
        let y = log.states[m + 1].flatten() - pred.flatten();
        let sigma = 0.05;
        let jj: f64 = j.column(0).norm_squared();
        let s_inv_y: f64 = j.column(0).dot(&y);
        let gain_denom = jj * sigma + noise.obs_variance;
        let mu_post = 0.1 + sigma * s_inv_y / gain_denom;
        let sigma_post = sigma - sigma * jj * sigma / gain_denom;
        assert!((out.belief.mean[0] - mu_post).abs() < 1e-12);
        assert!((out.belief.covariance[(0, 0)] - sigma_post).abs() < 1e-12);
    }

    #[test]
    fn zero_residual_keeps_mean_and_shrinks_covariance() {
        let sim = two_spring_sim(1.0);
        let u = Vec3::new(0.15, 0.0, 0.0);
        let mu = DVec::from_element(1, 0.25);
        let mut log = ObservationLog::start(SimState::new(vec![Vec3::zeros()]));
        let mut state = log.states[0].clone();
        for _ in 0..3 {
            state = sim.step(&state, &u, &mu).unwrap();
            log.push_transition(u, state.clone());
        }
        let prior = BoundaryBelief::uniform(1, 0.25, 0.1);
        let out = ekf_update(
            &prior,
            &sim,
            &log,
            &[2],
            &NoiseConfig::default(),
            &UpdateOptions::default(),
        )
        .unwrap();
        assert!((out.belief.mean[0] - 0.25).abs() < 1e-12);
        assert!(out.belief.covariance[(0, 0)] < 0.1);
    }

    #[test]
    fn zero_jacobian_is_identity_update() {
        // Rest state with the action at the anchor: nothing displaces.
        let mesh: Mesh<f64> = build_grid_mesh(3, 3, 0.1).unwrap();
        let mut sim = Simulator::new(&mesh, 1.0, SolverConfig::for_spacing(0.1));
        let u0 = mesh.rest_positions[4];
        sim.set_grasp(Some(apply_grasp(&mesh, &u0, 0.12, 1.0).unwrap()));
        let rest = SimState::at_rest(&mesh);
        let mut log = ObservationLog::start(rest.clone());
        log.push_transition(u0, rest);
        let prior = BoundaryBelief::uniform(9, 1e-4, 0.1);
        let out = ekf_update(
            &prior,
            &sim,
            &log,
            &[0],
            &NoiseConfig::default(),
            &UpdateOptions::default(),
        )
        .unwrap();
        assert_eq!(out.belief.mean, prior.mean);
        assert_eq!(out.belief.covariance, prior.covariance);
    }

    #[test]
    fn posterior_never_exceeds_prior_in_loewner_order() {
        let sim = two_spring_sim(1.0);
        let u = Vec3::new(0.25, 0.05, 0.0);
        let b_true = DVec::from_element(1, 0.3);
        let mut log = ObservationLog::start(SimState::new(vec![Vec3::zeros()]));
        let mut state = log.states[0].clone();
        for _ in 0..4 {
            state = sim.step(&state, &u, &b_true).unwrap();
            log.push_transition(u, state.clone());
        }
        let prior = BoundaryBelief::uniform(1, 0.05, 0.2);
        let out = ekf_update(
            &prior,
            &sim,
            &log,
            &[1, 3],
            &NoiseConfig::default(),
            &UpdateOptions::default(),
        )
        .unwrap();
        let diff = &prior.covariance - &out.belief.covariance;
        let eig = diff.symmetric_eigen();
        assert!(eig.eigenvalues.iter().all(|&l| l >= -1e-8));
    }

    #[test]
    fn multi_shooting_with_latest_sample_equals_single_step_form() {
        let sim = two_spring_sim(1.5);
        let u = Vec3::new(0.1, 0.0, 0.05);
        let b_true = DVec::from_element(1, 0.2);
        let mut log = ObservationLog::start(SimState::new(vec![Vec3::zeros()]));
        let mut state = log.states[0].clone();
        for _ in 0..3 {
            state = sim.step(&state, &u, &b_true).unwrap();
            log.push_transition(u, state.clone());
        }
        let prior = BoundaryBelief::uniform(1, 0.02, 0.3);
        let noise = NoiseConfig::default();
        let opts = UpdateOptions::default();
        let t = log.len() - 1;
        let out = ekf_update(&prior, &sim, &log, &[t], &noise, &opts).unwrap();

        // Single-step update assembled by hand.
        let j = fd_step_jacobian(&sim, &log.states[t], &u, &prior.mean, opts.fd_eps).unwrap();
        let pred = sim.step(&log.states[t], &u, &prior.mean).unwrap();
        let y = log.states[t + 1].flatten() - pred.flatten();
        let k = kalman_gain(&prior.covariance, &j, noise.obs_variance).unwrap();
        let mu = (&prior.mean + &k * y).map(|v| v.max(0.0));
        let cov = (DMat::identity(1, 1) - &k * &j) * &prior.covariance;
        assert!((out.belief.mean[0] - mu[0]).abs() < 1e-14);
        assert!((out.belief.covariance[(0, 0)] - cov[(0, 0)]).abs() < 1e-14);
    }

    #[test]
    fn entropy_closed_forms() {
        let b = BoundaryBelief::<f64>::uniform(6, 0.0, 1.0);
        assert!(entropy(&b).abs() < 1e-12);
        let c = BoundaryBelief::<f64>::uniform(4, 0.0, 2.5);
        assert!((entropy(&c) - 4.0 * 2.5f64.ln()).abs() < 1e-12);

        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..10 {
            let m = random_psd(7, &mut rng);
            let direct = entropy(&BoundaryBelief::new(DVec::zeros(7), m.clone()));
            let oracle: f64 = m
                .symmetric_eigen()
                .eigenvalues
                .iter()
                .map(|l| l.ln())
                .sum();
            assert!((direct - oracle).abs() < 1e-9);
        }
    }

    #[test]
    fn entropy_floor_on_singular_covariance() {
        let mut cov = DMat::identity(3, 3);
        cov[(2, 2)] = 0.0;
        let b = BoundaryBelief::new(DVec::zeros(3), cov);
        assert_eq!(entropy(&b), ENTROPY_FLOOR);
    }

    #[test]
    fn product_form_trivial_cases() {
        let sigma = DMat::identity(4, 4) * 0.3;
        let j = DMat::zeros(12, 4);
        let det = entropy_product_form(&sigma, &j, 1e-6);
        assert!((det - 0.3f64.powi(4)).abs() < 1e-15);

        // n = 1: sigma alpha / (j^2 sigma + alpha), the 1-D posterior variance.
        let sigma = DMat::<f64>::from_element(1, 1, 0.04);
        let j = DMat::from_element(1, 1, 0.7);
        let alpha = 1e-3;
        let got = entropy_product_form(&sigma, &j, alpha);
        let want = 0.04 * alpha / (0.7 * 0.7 * 0.04 + alpha);
        assert!((got - want).abs() < 1e-12);
    }

    #[test]
    fn product_form_matches_update_determinant() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..30 {
            let n = rng.gen_range(2..=6);
            let rows = rng.gen_range(1..=3 * n);
            let sigma = random_psd(n, &mut rng);
            let j = DMat::from_fn(rows, n, |_, _| rng.gen_range(-1.0..1.0));
            let alpha = rng.gen_range(1e-6..1e-1);
            let product = entropy_product_form(&sigma, &j, alpha);
            let k = kalman_gain(&sigma, &j, alpha).unwrap();
            let post = (DMat::identity(n, n) - &k * &j) * &sigma;
            let direct = post.lu().determinant();
            let rel = (product - direct).abs() / direct.abs().max(1e-300);
            assert!(rel <= 1e-8, "rel {}", rel);
            let log_form = entropy_product_form_log(&sigma, &j, alpha);
            assert!((log_form - direct.ln()).abs() < 1e-8);
        }
    }
}
