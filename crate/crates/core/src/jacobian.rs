//! Observation Jacobians `dx/db`.
//!
//! The estimator consumes central finite differences through the full
//! nonlinear solver. The linearized spring model below reproduces the
//! closed-form Jacobian of the quadratic energy (stiffness Laplacian,
//! implicit-function theorem) and serves as oracle machinery for it.

use crate::mesh::{Edge, Mesh};
use crate::sim::{SimError, SimState, Simulator};
use crate::{DMat, DVec, Real, Vec3};
use rayon::prelude::*;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum JacobianError {
    #[error("solver diverged while perturbing stiffness column {column}: {source}")]
    Divergence {
        column: usize,
        #[source]
        source: SimError,
    },
    #[error("stiffness system is singular")]
    Singular,
}

/// Sensitivity of flattened particle positions to boundary stiffness,
/// columns in stiffness order.
pub type ObservationJacobian<T> = DMat<T>;

/// Central finite differences of an arbitrary forward map `b -> flat state`.
/// Columns are independent and evaluated in parallel. Perturbations below
/// zero are clamped, with the difference quotient scaled accordingly.
pub fn fd_observation_jacobian<T, F>(
    map: F,
    b: &DVec<T>,
    eps: T,
) -> Result<ObservationJacobian<T>, JacobianError>
where
    T: Real,
    F: Fn(&DVec<T>) -> Result<DVec<T>, SimError> + Sync,
{
    assert!(eps > T::zero(), "fd step must be positive");
    let n = b.len();
    let columns: Result<Vec<DVec<T>>, JacobianError> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut b_plus = b.clone();
            b_plus[i] += eps;
            let mut b_minus = b.clone();
            b_minus[i] = (b_minus[i] - eps).max(T::zero());
            let denom = b_plus[i] - b_minus[i];
            let f_plus = map(&b_plus).map_err(|source| JacobianError::Divergence {
                column: i,
                source,
            })?;
            let f_minus = map(&b_minus).map_err(|source| JacobianError::Divergence {
                column: i,
                source,
            })?;
            Ok((f_plus - f_minus) / denom)
        })
        .collect();
    let columns = columns?;
    let rows = columns.first().map_or(0, |c| c.len());
    Ok(DMat::from_fn(rows, n, |r, c| columns[c][r]))
}

/// Finite differences through one solver step from `x_ref`, the map the
/// EKF observes.
pub fn fd_step_jacobian<T: Real>(
    sim: &Simulator<T>,
    x_ref: &SimState<T>,
    u: &Vec3<T>,
    b: &DVec<T>,
    eps: T,
) -> Result<ObservationJacobian<T>, JacobianError> {
    fd_observation_jacobian(|bb| sim.step(x_ref, u, bb).map(|s| s.flatten()), b, eps)
}

/// Weighted graph Laplacian of the non-boundary springs plus the linear
/// rest-length term of the quadratic energy.
#[derive(Debug, Clone)]
pub struct StiffnessLaplacian<T> {
    /// Pre-Kronecker n x n matrix, rows summing to zero.
    pub pre: DMat<T>,
    /// Linear forcing `P d` of the rest-length terms, length 3n.
    pub pd: DVec<T>,
}

impl<T: Real> StiffnessLaplacian<T> {
    pub fn from_springs(
        rest_positions: &[Vec3<T>],
        springs: &[Edge<T>],
        k: &DVec<T>,
    ) -> Self {
        assert_eq!(springs.len(), k.len());
        let n = rest_positions.len();
        let mut pre = DMat::zeros(n, n);
        let mut pd = DVec::zeros(3 * n);
        for (e, &kj) in springs.iter().zip(k.iter()) {
            debug_assert!(kj >= T::zero());
            pre[(e.i, e.i)] += kj;
            pre[(e.j, e.j)] += kj;
            pre[(e.i, e.j)] -= kj;
            pre[(e.j, e.i)] -= kj;
            let diff = rest_positions[e.i] - rest_positions[e.j];
            let norm = diff.norm();
            let d = if norm > T::zero() {
                diff * (e.rest_length / norm)
            } else {
                Vec3::zeros()
            };
            for a in 0..3 {
                pd[3 * e.i + a] += kj * d[a];
                pd[3 * e.j + a] -= kj * d[a];
            }
        }
        StiffnessLaplacian { pre, pd }
    }

    /// Kronecker expansion by the 3x3 identity.
    pub fn expanded(&self) -> DMat<T> {
        let n = self.pre.nrows();
        let mut full = DMat::zeros(3 * n, 3 * n);
        for i in 0..n {
            for j in 0..n {
                let v = self.pre[(i, j)];
                if v != T::zero() {
                    for a in 0..3 {
                        full[(3 * i + a, 3 * j + a)] = v;
                    }
                }
            }
        }
        full
    }
}

/// All mesh springs (edges then bending pairs) with stiffness `k` per spring.
pub fn assemble_stiffness_laplacian<T: Real>(mesh: &Mesh<T>, k: &DVec<T>) -> StiffnessLaplacian<T> {
    let springs: Vec<Edge<T>> = mesh
        .edges
        .iter()
        .chain(mesh.bending_pairs.iter())
        .copied()
        .collect();
    StiffnessLaplacian::from_springs(&mesh.rest_positions, &springs, k)
}

/// An anchor spring with zero rest length pulling one particle to a fixed
/// target, e.g. a linearized grasp.
#[derive(Debug, Clone, Copy)]
pub struct ExternalPull<T> {
    pub particle: usize,
    pub stiffness: T,
    pub target: Vec3<T>,
}

/// Quadratic spring energy: mesh Laplacian, zero-rest-length boundary
/// springs on `boundary` particles, and optional external anchor pulls.
/// The stationarity system is linear in the flattened positions.
#[derive(Debug, Clone)]
pub struct LinearSpringModel<T> {
    pub laplacian: StiffnessLaplacian<T>,
    pub rest_positions: Vec<Vec3<T>>,
    pub boundary: Vec<usize>,
    pub pulls: Vec<ExternalPull<T>>,
}

const TIKHONOV: f64 = 1e-10;

impl<T: Real> LinearSpringModel<T> {
    pub fn particle_count(&self) -> usize {
        self.rest_positions.len()
    }

    /// Energy Hessian: `L (x) I3` plus boundary and pull stiffness on the
    /// diagonal. Inverting its negation gives the appendix's `R(b)`.
    pub fn hessian(&self, b: &DVec<T>) -> DMat<T> {
        assert_eq!(b.len(), self.boundary.len());
        let mut h = self.laplacian.expanded();
        for (c, &p) in self.boundary.iter().enumerate() {
            for a in 0..3 {
                h[(3 * p + a, 3 * p + a)] += b[c];
            }
        }
        for pull in &self.pulls {
            for a in 0..3 {
                h[(3 * pull.particle + a, 3 * pull.particle + a)] += pull.stiffness;
            }
        }
        h
    }

    fn rhs(&self, b: &DVec<T>) -> DVec<T> {
        let mut g = self.laplacian.pd.clone();
        for (c, &p) in self.boundary.iter().enumerate() {
            let anchor = self.rest_positions[p];
            for a in 0..3 {
                g[3 * p + a] += b[c] * anchor[a];
            }
        }
        for pull in &self.pulls {
            for a in 0..3 {
                g[3 * pull.particle + a] += pull.stiffness * pull.target[a];
            }
        }
        g
    }

    fn solve(&self, b: &DVec<T>, rhs: DMat<T>) -> Result<DMat<T>, JacobianError> {
        let h = self.hessian(b);
        if let Some(chol) = h.clone().cholesky() {
            return Ok(chol.solve(&rhs));
        }
        log::warn!("stiffness system not positive definite; regularizing");
        let n = h.nrows();
        let jitter = T::from_f64_lossy(TIKHONOV);
        let regularized = h + DMat::identity(n, n) * jitter;
        regularized
            .cholesky()
            .map(|chol| chol.solve(&rhs))
            .ok_or(JacobianError::Singular)
    }

    /// Exact minimizer of the quadratic energy.
    pub fn equilibrium(&self, b: &DVec<T>) -> Result<Vec<Vec3<T>>, JacobianError> {
        let flat = self.equilibrium_flat(b)?;
        Ok(unflatten(&flat))
    }

    pub fn equilibrium_flat(&self, b: &DVec<T>) -> Result<DVec<T>, JacobianError> {
        let rhs = DMat::from_column_slice(3 * self.particle_count(), 1, self.rhs(b).as_slice());
        let sol = self.solve(b, rhs)?;
        Ok(DVec::from_column_slice(sol.as_slice()))
    }

    /// Energy gradient at a flattened state; zero at the equilibrium.
    pub fn gradient(&self, x: &DVec<T>, b: &DVec<T>) -> DVec<T> {
        self.hessian(b) * x - self.rhs(b)
    }

    /// Concatenated displacement block `D`: column `c` carries the 3-vector
    /// displacement of the c-th boundary particle in its own row block.
    pub fn displacement_block(&self, displacement: &[Vec3<T>]) -> DMat<T> {
        assert_eq!(displacement.len(), self.boundary.len());
        let mut d = DMat::zeros(3 * self.particle_count(), self.boundary.len());
        for (c, (&p, dx)) in self.boundary.iter().zip(displacement).enumerate() {
            for a in 0..3 {
                d[(3 * p + a, c)] = dx[a];
            }
        }
        d
    }

    /// Implicit-function Jacobian `J = R(b) D` with `R(b)` the negated
    /// inverse Hessian and `D` the displacement block.
    pub fn analytical_jacobian(
        &self,
        b: &DVec<T>,
        displacement: &[Vec3<T>],
    ) -> Result<ObservationJacobian<T>, JacobianError> {
        let d = self.displacement_block(displacement);
        Ok(-self.solve(b, d)?)
    }

    /// `R(b)`, materialized; intended for small oracle instances.
    pub fn negated_inverse(&self, b: &DVec<T>) -> Result<DMat<T>, JacobianError> {
        let n = 3 * self.particle_count();
        Ok(-self.solve(b, DMat::identity(n, n))?)
    }

    /// Boundary-particle displacements of a flattened state from rest.
    pub fn boundary_displacement(&self, x: &DVec<T>) -> Vec<Vec3<T>> {
        self.boundary
            .iter()
            .map(|&p| {
                Vec3::new(x[3 * p], x[3 * p + 1], x[3 * p + 2]) - self.rest_positions[p]
            })
            .collect()
    }
}

fn unflatten<T: Real>(x: &DVec<T>) -> Vec<Vec3<T>> {
    (0..x.len() / 3)
        .map(|i| Vec3::new(x[3 * i], x[3 * i + 1], x[3 * i + 2]))
        .collect()
}
