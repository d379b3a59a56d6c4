//! Quasi-static XPBD solver over distance-family constraints.
//!
//! One `step` performs a single compliant constraint solve (Lagrange
//! multipliers reset at entry, Gauss-Seidel sweeps in a fixed order), which
//! is the forward map `f(x, u, b)` observed by the estimator. Repeated
//! stepping converges to the static equilibrium of the constraint energy.

use crate::mesh::{grasp_neighborhood, Edge, Mesh, MeshError};
use crate::{DVec, Real, Vec3};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("solver diverged (non-finite positions) at sweep {sweep}")]
    Diverged { sweep: usize },
    #[error(transparent)]
    Mesh(#[from] MeshError),
}

/// Particle positions at a timestep.
#[derive(Debug, Clone, PartialEq)]
pub struct SimState<T> {
    pub positions: Vec<Vec3<T>>,
    pub time_index: usize,
}

impl<T: Real> SimState<T> {
    pub fn new(positions: Vec<Vec3<T>>) -> Self {
        SimState {
            positions,
            time_index: 0,
        }
    }

    pub fn at_rest(mesh: &Mesh<T>) -> Self {
        SimState::new(mesh.rest_positions.clone())
    }

    pub fn is_finite(&self) -> bool {
        self.positions
            .iter()
            .all(|p| p.iter().all(|c| c.is_finite()))
    }

    /// Flattened copy `[x0 y0 z0 x1 y1 z1 ...]`.
    pub fn flatten(&self) -> DVec<T> {
        let mut v = DVec::zeros(3 * self.positions.len());
        for (i, p) in self.positions.iter().enumerate() {
            v[3 * i] = p[0];
            v[3 * i + 1] = p[1];
            v[3 * i + 2] = p[2];
        }
        v
    }
}

/// One spring from a grasped particle to the virtual grasp point.
#[derive(Debug, Clone, Copy)]
pub struct GraspSpring<T> {
    pub particle: usize,
    pub rest_length: T,
}

/// The active grasp: springs to an infinite-mass virtual particle whose
/// position is supplied per step as the action `u`.
#[derive(Debug, Clone)]
pub struct Grasp<T> {
    pub springs: Vec<GraspSpring<T>>,
    pub stiffness: T,
}

/// One spring per grasped particle with rest length equal to its distance
/// to `u0` in the rest pose.
pub fn apply_grasp<T: Real>(
    mesh: &Mesh<T>,
    u0: &Vec3<T>,
    r: T,
    stiffness: T,
) -> Result<Grasp<T>, MeshError> {
    let picked = grasp_neighborhood(mesh, u0, r)?;
    let springs = picked
        .into_iter()
        .map(|particle| GraspSpring {
            particle,
            rest_length: (mesh.rest_positions[particle] - u0).norm(),
        })
        .collect();
    Ok(Grasp { springs, stiffness })
}

/// Grasp a deformed configuration: the neighborhood and rest lengths are
/// taken from the current particle positions instead of the rest pose.
pub fn apply_grasp_at<T: Real>(
    state: &SimState<T>,
    u0: &Vec3<T>,
    r: T,
    stiffness: T,
) -> Result<Grasp<T>, MeshError> {
    let springs: Vec<GraspSpring<T>> = state
        .positions
        .iter()
        .enumerate()
        .filter(|(_, p)| (*p - u0).norm() < r)
        .map(|(particle, p)| GraspSpring {
            particle,
            rest_length: (p - u0).norm(),
        })
        .collect();
    if springs.is_empty() {
        return Err(MeshError::GraspMiss {
            radius: r.to_subset().unwrap_or(f64::NAN),
        });
    }
    Ok(Grasp { springs, stiffness })
}

/// Mesh, grasp, and boundary constraints with their stiffness constants.
/// The boundary stiffness vector `b` is supplied per solver call.
#[derive(Debug, Clone)]
pub struct ConstraintSet<T> {
    pub edges: Vec<Edge<T>>,
    pub bending: Vec<Edge<T>>,
    /// Known mesh stiffness applied to edges and bending pairs.
    pub stiffness_mesh: T,
    pub grasp: Option<Grasp<T>>,
    /// Per-particle boundary spring anchor, exactly the rest position.
    pub boundary_anchors: Vec<Vec3<T>>,
}

impl<T: Real> ConstraintSet<T> {
    pub fn from_mesh(mesh: &Mesh<T>, stiffness_mesh: T) -> Self {
        ConstraintSet {
            edges: mesh.edges.clone(),
            bending: mesh.bending_pairs.clone(),
            stiffness_mesh,
            grasp: None,
            boundary_anchors: mesh.rest_positions.clone(),
        }
    }

    /// Replaces the grasp fragment; old springs are removed.
    pub fn set_grasp(&mut self, grasp: Option<Grasp<T>>) {
        self.grasp = grasp;
    }

    pub fn constraint_count(&self) -> usize {
        self.edges.len()
            + self.bending.len()
            + self.grasp.as_ref().map_or(0, |g| g.springs.len())
            + self.boundary_anchors.len()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SolverConfig<T> {
    pub max_iterations: usize,
    pub residual_tolerance: T,
    /// Nominal timestep entering the compliance `1/(k dt^2)`.
    pub dt: T,
    /// Quasi-static gravity: a per-step position kick of `g * dt^2`.
    pub gravity: Option<Vec3<T>>,
    /// One-sided projection `z >= ground_plane_z` after every sweep.
    pub ground_plane_z: Option<T>,
}

impl<T: Real> SolverConfig<T> {
    /// Defaults scaled to a mesh spacing.
    pub fn for_spacing(spacing: T) -> Self {
        SolverConfig {
            max_iterations: 200,
            residual_tolerance: T::from_f64_lossy(1e-6) * spacing,
            dt: T::one(),
            gravity: None,
            ground_plane_z: None,
        }
    }
}

impl<T: Real> Default for SolverConfig<T> {
    fn default() -> Self {
        SolverConfig::for_spacing(T::from_f64_lossy(0.1))
    }
}

#[derive(Debug, Clone, Copy)]
pub struct StepStats {
    pub sweeps: usize,
    /// True when the residual criterion was met before `max_iterations`.
    pub converged_early: bool,
}

/// Solver over a fixed constraint set. `step` is a pure function of its
/// inputs; instances can be shared across threads for parallel rollouts.
#[derive(Debug, Clone)]
pub struct Simulator<T> {
    pub constraints: ConstraintSet<T>,
    pub cfg: SolverConfig<T>,
}

impl<T: Real> Simulator<T> {
    pub fn new(mesh: &Mesh<T>, stiffness_mesh: T, cfg: SolverConfig<T>) -> Self {
        Simulator {
            constraints: ConstraintSet::from_mesh(mesh, stiffness_mesh),
            cfg,
        }
    }

    pub fn particle_count(&self) -> usize {
        self.constraints.boundary_anchors.len()
    }

    pub fn set_grasp(&mut self, grasp: Option<Grasp<T>>) {
        self.constraints.set_grasp(grasp);
    }

    /// One quasi-static XPBD solve: `x_{t+1} = f(x_t, u_t, b)`.
    pub fn step(
        &self,
        state: &SimState<T>,
        u: &Vec3<T>,
        b: &DVec<T>,
    ) -> Result<SimState<T>, SimError> {
        self.step_detailed(state, u, b).map(|(s, _)| s)
    }

    pub fn step_detailed(
        &self,
        state: &SimState<T>,
        u: &Vec3<T>,
        b: &DVec<T>,
    ) -> Result<(SimState<T>, StepStats), SimError> {
        self.step_with_position_pull(state, u, b, |_, _| {})
    }

    /// Core solve with a hook that may add an external position pull after
    /// each sweep (used by point-cloud registration). The hook receives the
    /// sweep index and mutable positions; a no-op hook leaves the code path
    /// identical to the plain step.
    pub(crate) fn step_with_position_pull<F>(
        &self,
        state: &SimState<T>,
        u: &Vec3<T>,
        b: &DVec<T>,
        mut pull: F,
    ) -> Result<(SimState<T>, StepStats), SimError>
    where
        F: FnMut(usize, &mut [Vec3<T>]),
    {
        let cs = &self.constraints;
        debug_assert_eq!(b.len(), cs.boundary_anchors.len());
        if !state.is_finite() || !u.iter().all(|c| c.is_finite()) {
            return Err(SimError::Diverged { sweep: 0 });
        }
        let mut x = state.positions.clone();
        let dt2 = self.cfg.dt * self.cfg.dt;
        let inv_dt2 = T::one() / dt2;

        if let Some(g) = self.cfg.gravity {
            for p in &mut x {
                *p += g * dt2;
            }
            project_ground(&mut x, self.cfg.ground_plane_z);
        }

        let n_lambda = cs.constraint_count();
        let mut lambda = vec![T::zero(); n_lambda];
        let tiny = T::default_epsilon() * T::from_f64_lossy(16.0);

        let mut sweeps = 0;
        let mut converged_early = false;
        for sweep in 0..self.cfg.max_iterations {
            sweeps = sweep + 1;
            let mut max_violation = T::zero();
            let mut li = 0;

            // Pairwise distance constraints: edges then bending pairs.
            for group in [&cs.edges, &cs.bending] {
                let k = cs.stiffness_mesh;
                for e in group {
                    if k > T::zero() {
                        let d = x[e.i] - x[e.j];
                        let len = d.norm();
                        if len > tiny {
                            let c = len - e.rest_length;
                            max_violation = max_violation.max(c.abs());
                            let alpha = inv_dt2 / k;
                            let dl = (-c - alpha * lambda[li])
                                / (T::from_f64_lossy(2.0) + alpha);
                            let dir = d / len;
                            x[e.i] += dir * dl;
                            x[e.j] -= dir * dl;
                            lambda[li] += dl;
                        }
                    }
                    li += 1;
                }
            }

            // Grasp springs to the infinite-mass virtual particle at u.
            if let Some(g) = &cs.grasp {
                let k = g.stiffness;
                for s in &g.springs {
                    if k > T::zero() {
                        let d = x[s.particle] - u;
                        let len = d.norm();
                        if len > tiny {
                            let c = len - s.rest_length;
                            max_violation = max_violation.max(c.abs());
                            let alpha = inv_dt2 / k;
                            let dl = (-c - alpha * lambda[li]) / (T::one() + alpha);
                            x[s.particle] += (d / len) * dl;
                            lambda[li] += dl;
                        }
                    }
                    li += 1;
                }
            }

            // Zero-rest-length boundary springs to the rest anchors.
            for (i, anchor) in cs.boundary_anchors.iter().enumerate() {
                let k = b[i];
                if k > T::zero() {
                    let d = x[i] - anchor;
                    let len = d.norm();
                    if len > tiny {
                        max_violation = max_violation.max(len);
                        let alpha = inv_dt2 / k;
                        let dl = (-len - alpha * lambda[li]) / (T::one() + alpha);
                        x[i] += (d / len) * dl;
                        lambda[li] += dl;
                    }
                }
                li += 1;
            }

            pull(sweep, &mut x);
            project_ground(&mut x, self.cfg.ground_plane_z);

            if x.iter().any(|p| !p[0].is_finite() || !p[1].is_finite() || !p[2].is_finite()) {
                return Err(SimError::Diverged { sweep });
            }

            if max_violation <= self.cfg.residual_tolerance {
                // Confirm on the post-sweep state before exiting early.
                let state_now = SimState {
                    positions: x.clone(),
                    time_index: state.time_index,
                };
                let worst = self
                    .constraint_residuals(&state_now, u, b)
                    .into_iter()
                    .fold(T::zero(), |a, r| a.max(r.abs()));
                if worst <= self.cfg.residual_tolerance {
                    converged_early = true;
                    break;
                }
            }
        }

        Ok((
            SimState {
                positions: x,
                time_index: state.time_index + 1,
            },
            StepStats {
                sweeps,
                converged_early,
            },
        ))
    }

    /// Per-constraint violations `C(x, u)` in solver sweep order.
    pub fn constraint_residuals(&self, state: &SimState<T>, u: &Vec3<T>, b: &DVec<T>) -> Vec<T> {
        let cs = &self.constraints;
        let x = &state.positions;
        let mut res = Vec::with_capacity(cs.constraint_count());
        for group in [&cs.edges, &cs.bending] {
            for e in group {
                if cs.stiffness_mesh > T::zero() {
                    res.push((x[e.i] - x[e.j]).norm() - e.rest_length);
                } else {
                    res.push(T::zero());
                }
            }
        }
        if let Some(g) = &cs.grasp {
            for s in &g.springs {
                if g.stiffness > T::zero() {
                    res.push((x[s.particle] - u).norm() - s.rest_length);
                } else {
                    res.push(T::zero());
                }
            }
        }
        for (i, anchor) in cs.boundary_anchors.iter().enumerate() {
            if b[i] > T::zero() {
                res.push((x[i] - anchor).norm());
            } else {
                res.push(T::zero());
            }
        }
        res
    }

    /// Weighted sum of squared constraint violations, `1/2 C' diag(k) C`.
    pub fn total_energy(&self, state: &SimState<T>, u: &Vec3<T>, b: &DVec<T>) -> T {
        let cs = &self.constraints;
        let x = &state.positions;
        let half = T::from_f64_lossy(0.5);
        let mut e = T::zero();
        for group in [&cs.edges, &cs.bending] {
            for edge in group {
                let c = (x[edge.i] - x[edge.j]).norm() - edge.rest_length;
                e += half * cs.stiffness_mesh * c * c;
            }
        }
        if let Some(g) = &cs.grasp {
            for s in &g.springs {
                let c = (x[s.particle] - u).norm() - s.rest_length;
                e += half * g.stiffness * c * c;
            }
        }
        e + self.boundary_energy(state, b)
    }

    /// Elastic potential of the boundary springs, `1/2 sum b_i |x_i - x_i0|^2`.
    pub fn boundary_energy(&self, state: &SimState<T>, b: &DVec<T>) -> T {
        boundary_energy(&state.positions, &self.constraints.boundary_anchors, b)
    }
}

pub fn boundary_energy<T: Real>(positions: &[Vec3<T>], anchors: &[Vec3<T>], b: &DVec<T>) -> T {
    let half = T::from_f64_lossy(0.5);
    positions
        .iter()
        .zip(anchors)
        .zip(b.iter())
        .fold(T::zero(), |acc, ((x, a), &bi)| {
            acc + half * bi * (x - a).norm_squared()
        })
}

fn project_ground<T: Real>(x: &mut [Vec3<T>], ground: Option<T>) {
    if let Some(z0) = ground {
        for p in x {
            if p[2] < z0 {
                p[2] = z0;
            }
        }
    }
}
