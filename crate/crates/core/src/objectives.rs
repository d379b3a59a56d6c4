//! Active-sensing objectives: uncertainty-weighted displacement, the
//! entropy surrogate, boundary energy penalty, and workspace penalty,
//! composed into the two loss functions the controllers minimize.

use crate::estimator::{kalman_gain, BoundaryBelief, NoiseConfig};
use crate::jacobian::fd_step_jacobian;
use crate::sim::{SimError, SimState, Simulator};
use crate::{DMat, Real, Vec3};

/// Relative weights of the loss terms.
#[derive(Debug, Clone, Copy)]
pub struct LossWeights<T> {
    pub energy_weight: T,
    /// The workspace penalty weight (sigma).
    pub workspace_weight: T,
    pub uwd_weight: T,
    pub entropy_weight: T,
}

impl<T: Real> Default for LossWeights<T> {
    fn default() -> Self {
        LossWeights {
            energy_weight: T::one(),
            workspace_weight: T::from_f64_lossy(10.0),
            uwd_weight: T::one(),
            entropy_weight: T::one(),
        }
    }
}

impl<T: Real> LossWeights<T> {
    /// Scales the displacement term by `1 / width^2` so losses stay
    /// dimensionless across mesh sizes.
    pub fn for_mesh_width(width: T) -> Self {
        LossWeights {
            uwd_weight: T::one() / (width * width),
            ..LossWeights::default()
        }
    }
}

/// Block-diagonal displacement matrix: column `i` holds particle `i`'s
/// 3-vector displacement in rows `3i..3i+2`.
pub fn uwd_matrix<T: Real>(displacements: &[Vec3<T>]) -> DMat<T> {
    let n = displacements.len();
    let mut m = DMat::zeros(3 * n, n);
    for (i, d) in displacements.iter().enumerate() {
        for a in 0..3 {
            m[(3 * i + a, i)] = d[a];
        }
    }
    m
}

/// Frobenius norm of the displacement matrix times the covariance, without
/// materializing the product: row block `i` of `Dhat Sigma` is the outer
/// product of displacement `i` with covariance row `i`.
pub fn uwd_value<T: Real>(displacements: &[Vec3<T>], covariance: &DMat<T>) -> T {
    let n = displacements.len();
    debug_assert_eq!(covariance.nrows(), n);
    let mut total = T::zero();
    for (i, d) in displacements.iter().enumerate() {
        let row_sq = covariance.row(i).norm_squared();
        total += d.norm_squared() * row_sq;
    }
    total.sqrt()
}

/// Uncertainty-weighted displacement of the forward-simulated state,
/// displacements measured from the rest pose.
pub fn uwd<T: Real>(
    sim: &Simulator<T>,
    x_ref: &SimState<T>,
    u: &Vec3<T>,
    belief: &BoundaryBelief<T>,
) -> Result<T, SimError> {
    let next = sim.step(x_ref, u, &belief.mean)?;
    let disp = displacements_from_rest(sim, &next);
    Ok(uwd_value(&disp, &belief.covariance))
}

pub fn displacements_from_rest<T: Real>(sim: &Simulator<T>, state: &SimState<T>) -> Vec<Vec3<T>> {
    state
        .positions
        .iter()
        .zip(&sim.constraints.boundary_anchors)
        .map(|(x, r)| x - r)
        .collect()
}

/// Determinant of `I - K J`, the posterior-to-prior covariance volume
/// ratio; 1 means no information gained.
pub fn entropy_surrogate<T: Real>(gain: &DMat<T>, j: &DMat<T>) -> T {
    let n = gain.nrows();
    let m = DMat::identity(n, n) - gain * j;
    m.lu().determinant()
}

/// Workspace indicator `exp(-min(u_z, 0))`: 1 inside, growing below ground.
pub fn in_workspace<T: Real>(u: &Vec3<T>) -> T {
    (-u[2].min(T::zero())).exp()
}

/// Zero for in-workspace actions, strictly increasing with violation depth.
pub fn workspace_penalty<T: Real>(u: &Vec3<T>) -> T {
    (in_workspace(u) - T::one()).max(T::zero())
}

/// Displacement-based loss: `-D + E_b + sigma * penalty`, with the
/// boundary energy evaluated on the predicted state at the mean belief.
pub fn loss_ld<T: Real>(
    sim: &Simulator<T>,
    x_ref: &SimState<T>,
    u: &Vec3<T>,
    belief: &BoundaryBelief<T>,
    w: &LossWeights<T>,
) -> Result<T, SimError> {
    let next = sim.step(x_ref, u, &belief.mean)?;
    let disp = displacements_from_rest(sim, &next);
    let d = uwd_value(&disp, &belief.covariance);
    let e_b = sim.boundary_energy(&next, &belief.mean);
    Ok(-w.uwd_weight * d + w.energy_weight * e_b + w.workspace_weight * workspace_penalty(u))
}

/// Entropy-surrogate loss: `det(I - KJ) + E_b + sigma * penalty`, with the
/// gain and Jacobian evaluated at the candidate action.
pub fn loss_lh<T: Real>(
    sim: &Simulator<T>,
    x_ref: &SimState<T>,
    u: &Vec3<T>,
    belief: &BoundaryBelief<T>,
    w: &LossWeights<T>,
    noise: &NoiseConfig<T>,
    fd_eps: T,
) -> Result<T, crate::jacobian::JacobianError> {
    let j = fd_step_jacobian(sim, x_ref, u, &belief.mean, fd_eps)?;
    let surrogate = match kalman_gain(&belief.covariance, &j, noise.obs_variance) {
        Some(k) => entropy_surrogate(&k, &j),
        None => T::one(),
    };
    let next = sim
        .step(x_ref, u, &belief.mean)
        .map_err(|e| crate::jacobian::JacobianError::Divergence { column: 0, source: e })?;
    let e_b = sim.boundary_energy(&next, &belief.mean);
    Ok(w.entropy_weight * surrogate
        + w.energy_weight * e_b
        + w.workspace_weight * workspace_penalty(u))
}
