//! Action selection: local gradient controllers over either loss, the
//! sampling-based large-step controller with elite carry-over, and the
//! predefined-motion-primitive baseline.

use crate::estimator::{entropy_product_form_log, BoundaryBelief, NoiseConfig};
use crate::jacobian::{fd_step_jacobian, JacobianError};
use crate::mesh::Mesh;
use crate::objectives::{loss_ld, loss_lh, LossWeights};
use crate::sim::{SimState, Simulator};
use crate::{Real, Vec3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ControllerError {
    #[error("every control sample diverged in simulation")]
    AllSamplesDiverged,
    #[error(transparent)]
    Jacobian(#[from] JacobianError),
    #[error(transparent)]
    Sim(#[from] crate::sim::SimError),
}

/// Axis-aligned sampling region for candidate actions.
#[derive(Debug, Clone, Copy)]
pub struct Aabb<T> {
    pub min: Vec3<T>,
    pub max: Vec3<T>,
}

impl<T: Real> Aabb<T> {
    pub fn sample<R: Rng>(&self, rng: &mut R) -> Vec3<T> {
        let mut p = Vec3::zeros();
        for a in 0..3 {
            let lo = self.min[a].to_subset().unwrap_or(0.0);
            let hi = self.max[a].to_subset().unwrap_or(0.0);
            let v = if hi > lo { rng.gen_range(lo..hi) } else { lo };
            p[a] = T::from_f64_lossy(v);
        }
        p
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ControllerConfig<T> {
    /// Gradient-descent step for both controller families.
    pub step_size: T,
    pub lg_iterations: usize,
    pub sample_count: usize,
    pub sl_iterations: usize,
    /// Truncated control length per executed action.
    pub truncation: T,
    pub elite_fraction: f64,
    pub workspace_bounds: Aabb<T>,
    /// Step for central differences of the loss over the 3-D action.
    pub fd_eps: T,
    pub rng_seed: u64,
}

impl<T: Real> ControllerConfig<T> {
    /// Defaults scaled to the mesh: the sampling box is the rest bounding
    /// box extruded upward by one mesh width and clipped at z = 0.
    pub fn for_mesh(mesh: &Mesh<T>) -> Self {
        let w = mesh.width();
        let mut lo = mesh.rest_positions[0];
        let mut hi = mesh.rest_positions[0];
        for p in &mesh.rest_positions {
            for a in 0..3 {
                lo[a] = lo[a].min(p[a]);
                hi[a] = hi[a].max(p[a]);
            }
        }
        hi[2] += w;
        lo[2] = lo[2].max(T::zero());
        ControllerConfig {
            step_size: T::from_f64_lossy(0.02) * w,
            lg_iterations: 10,
            sample_count: 100,
            sl_iterations: 5,
            truncation: T::from_f64_lossy(0.05) * w,
            elite_fraction: 0.10,
            workspace_bounds: Aabb { min: lo, max: hi },
            fd_eps: T::from_f64_lossy(1e-3) * w,
            rng_seed: 0,
        }
    }
}

/// Central finite differences of a scalar loss over the 3-D action;
/// six evaluations per gradient.
pub fn action_gradient<T, E, F>(loss: F, u: &Vec3<T>, eps: T) -> Result<Vec3<T>, E>
where
    T: Real,
    F: Fn(&Vec3<T>) -> Result<T, E>,
{
    let mut g = Vec3::zeros();
    for a in 0..3 {
        let mut up = *u;
        up[a] += eps;
        let mut dn = *u;
        dn[a] -= eps;
        let two = T::from_f64_lossy(2.0);
        g[a] = (loss(&up)? - loss(&dn)?) / (two * eps);
    }
    Ok(g)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LgKind {
    /// Entropy-surrogate loss.
    H,
    /// Displacement loss.
    D,
}

/// Guarded gradient descent from the previous action: steps are only
/// accepted while they lower the loss, so the returned action never
/// scores worse than `u_prev`.
#[allow(clippy::too_many_arguments)]
pub fn lg_step<T: Real>(
    kind: LgKind,
    sim: &Simulator<T>,
    x_ref: &SimState<T>,
    belief: &BoundaryBelief<T>,
    u_prev: &Vec3<T>,
    cfg: &ControllerConfig<T>,
    weights: &LossWeights<T>,
    noise: &NoiseConfig<T>,
) -> Result<Vec3<T>, ControllerError> {
    let loss = |u: &Vec3<T>| -> Result<T, ControllerError> {
        match kind {
            LgKind::D => loss_ld(sim, x_ref, u, belief, weights).map_err(Into::into),
            LgKind::H => {
                loss_lh(sim, x_ref, u, belief, weights, noise, cfg.fd_eps).map_err(Into::into)
            }
        }
    };
    let mut u = *u_prev;
    let mut current = loss(&u)?;
    for _ in 0..cfg.lg_iterations {
        let g = action_gradient(&loss, &u, cfg.fd_eps)?;
        if g.norm() == T::zero() {
            break;
        }
        let candidate = u - g * cfg.step_size;
        let next = loss(&candidate)?;
        if next < current {
            u = candidate;
            current = next;
        } else {
            break;
        }
    }
    Ok(u)
}

/// Sampling-based large-step controller over the displacement loss.
/// Keeps its elite samples and RNG across calls; the executed action is
/// truncated to length `truncation` toward the best sample.
#[derive(Debug, Clone)]
pub struct SldController<T> {
    pub cfg: ControllerConfig<T>,
    elites: Vec<Vec3<T>>,
    rng: ChaCha8Rng,
}

impl<T: Real> SldController<T> {
    pub fn new(cfg: ControllerConfig<T>) -> Self {
        let rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
        SldController {
            cfg,
            elites: Vec::new(),
            rng,
        }
    }

    pub fn elites(&self) -> &[Vec3<T>] {
        &self.elites
    }

    fn initial_samples(&mut self) -> Vec<Vec3<T>> {
        let mut samples = self.elites.clone();
        samples.truncate(self.cfg.sample_count);
        while samples.len() < self.cfg.sample_count {
            samples.push(self.cfg.workspace_bounds.sample(&mut self.rng));
        }
        samples
    }

    pub fn plan(
        &mut self,
        sim: &Simulator<T>,
        x_ref: &SimState<T>,
        belief: &BoundaryBelief<T>,
        u_prev: &Vec3<T>,
        weights: &LossWeights<T>,
    ) -> Result<Vec3<T>, ControllerError> {
        let samples = self.initial_samples();
        let cfg = self.cfg;

        // Refine and score each sample independently.
        let scored: Vec<Option<(Vec3<T>, T)>> = samples
            .par_iter()
            .map(|&s0| {
                let loss = |u: &Vec3<T>| loss_ld(sim, x_ref, u, belief, weights);
                let mut s = s0;
                for _ in 0..cfg.sl_iterations {
                    match action_gradient(&loss, &s, cfg.fd_eps) {
                        Ok(g) => s -= g * cfg.step_size,
                        Err(_) => return None,
                    }
                }
                loss(&s).ok().map(|l| (s, l))
            })
            .collect();

        let mut survivors: Vec<(Vec3<T>, T)> = scored.into_iter().flatten().collect();
        if survivors.is_empty() {
            return Err(ControllerError::AllSamplesDiverged);
        }
        survivors.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap_or(std::cmp::Ordering::Equal));

        let elite_count = (cfg.elite_fraction * cfg.sample_count as f64).floor() as usize;
        self.elites = survivors
            .iter()
            .take(elite_count)
            .map(|(s, _)| *s)
            .collect();

        let best = survivors[0].0;
        let dir = best - u_prev;
        let dist = dir.norm();
        if dist <= cfg.truncation || dist == T::zero() {
            Ok(best)
        } else {
            Ok(u_prev + dir * (cfg.truncation / dist))
        }
    }
}

/// Fixed directional motions; downward is deliberately absent.
#[derive(Debug, Clone)]
pub struct PrimitiveSet<T> {
    pub directions: Vec<(&'static str, Vec3<T>)>,
    pub step: T,
}

impl<T: Real> PrimitiveSet<T> {
    pub fn standard(step: T) -> Self {
        PrimitiveSet {
            directions: vec![
                ("up", Vec3::new(T::zero(), T::zero(), T::one())),
                ("forward", Vec3::new(T::zero(), T::one(), T::zero())),
                ("backward", Vec3::new(T::zero(), -T::one(), T::zero())),
                ("left", Vec3::new(-T::one(), T::zero(), T::zero())),
                ("right", Vec3::new(T::one(), T::zero(), T::zero())),
            ],
            step,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PmpChoice<T> {
    pub action: Vec3<T>,
    pub primitive_index: usize,
    /// Predicted posterior log-determinant per primitive, declaration order.
    pub predicted_entropies: Vec<T>,
}

/// Exhaustive one-step search: picks the primitive whose predicted
/// posterior entropy is lowest, ties broken by declaration order.
pub fn pmp_select<T: Real>(
    sim: &Simulator<T>,
    x_ref: &SimState<T>,
    belief: &BoundaryBelief<T>,
    u_prev: &Vec3<T>,
    primitives: &PrimitiveSet<T>,
    noise: &NoiseConfig<T>,
    fd_eps: T,
) -> Result<PmpChoice<T>, ControllerError> {
    assert!(!primitives.directions.is_empty());
    let mut predicted = Vec::with_capacity(primitives.directions.len());
    for (_, dir) in &primitives.directions {
        let candidate = u_prev + dir * primitives.step;
        let j = fd_step_jacobian(sim, x_ref, &candidate, &belief.mean, fd_eps)?;
        predicted.push(entropy_product_form_log(
            &belief.covariance,
            &j,
            noise.obs_variance,
        ));
    }
    let mut best = 0;
    for (i, &e) in predicted.iter().enumerate().skip(1) {
        if e < predicted[best] {
            best = i;
        }
    }
    Ok(PmpChoice {
        action: u_prev + primitives.directions[best].1 * primitives.step,
        primitive_index: best,
        predicted_entropies: predicted,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_grid_mesh, Edge};
    use crate::sim::{apply_grasp, ConstraintSet, Grasp, GraspSpring, SolverConfig};
    use crate::DVec;

    #[test]
    fn gradient_probes() {
        let ok = |v: f64| -> Result<f64, std::convert::Infallible> { Ok(v) };
        let g = action_gradient(|_| ok(3.5), &Vec3::new(0.1, 0.2, 0.3), 1e-6).unwrap();
        assert_eq!(g, Vec3::zeros());

        let g = action_gradient(|u| ok(u[2]), &Vec3::new(0.4, -0.1, 0.9), 1e-6).unwrap();
        assert!((g - Vec3::new(0.0, 0.0, 1.0)).norm() < 1e-8);

        let c = Vec3::new(0.3, -0.2, 0.5);
        let u = Vec3::new(1.0, 1.0, 1.0);
        let g = action_gradient(|u| ok((u - c).norm_squared()), &u, 1e-5).unwrap();
        assert!((g - (u - c) * 2.0).norm() < 1e-8);
    }

    fn small_setup() -> (Simulator<f64>, SimState<f64>, BoundaryBelief<f64>, Vec3<f64>) {
        let mesh: Mesh<f64> = build_grid_mesh(3, 3, 0.1).unwrap();
        let mut sim = Simulator::new(&mesh, 1.0, SolverConfig::for_spacing(0.1));
        let u0 = mesh.rest_positions[4];
        sim.set_grasp(Some(apply_grasp(&mesh, &u0, 0.12, 1.0).unwrap()));
        let belief = BoundaryBelief::uniform(9, 1e-4, 0.1);
        (sim, SimState::at_rest(&mesh), belief, u0)
    }

    fn test_cfg() -> ControllerConfig<f64> {
        let mesh: Mesh<f64> = build_grid_mesh(3, 3, 0.1).unwrap();
        let mut cfg = ControllerConfig::for_mesh(&mesh);
        cfg.rng_seed = 7;
        cfg
    }

    #[test]
    fn lg_step_never_worsens_the_loss() {
        let (sim, rest, belief, u0) = small_setup();
        let cfg = test_cfg();
        let w = LossWeights::default();
        let noise = NoiseConfig::default();
        let u = lg_step(LgKind::D, &sim, &rest, &belief, &u0, &cfg, &w, &noise).unwrap();
        let before = loss_ld(&sim, &rest, &u0, &belief, &w).unwrap();
        let after = loss_ld(&sim, &rest, &u, &belief, &w).unwrap();
        assert!(after <= before);
    }

    #[test]
    fn lg_step_descends_quadratic_probe() {
        // Drive descent on a pure quadratic by swapping in a probe loss via
        // the gradient helper; checks the iteration logic in isolation.
        let c = Vec3::new(0.2, 0.1, 0.4);
        let loss = |u: &Vec3<f64>| -> Result<f64, std::convert::Infallible> {
            Ok((u - c).norm_squared())
        };
        let mut u = Vec3::new(1.0, 1.0, 1.0);
        let alpha = 0.2;
        for _ in 0..50 {
            let g = action_gradient(&loss, &u, 1e-6).unwrap();
            u -= g * alpha;
        }
        assert!((u - c).norm() < 1e-3);
    }

    #[test]
    fn sld_truncates_to_gamma() {
        let (sim, rest, belief, u0) = small_setup();
        let mut cfg = test_cfg();
        cfg.sample_count = 1;
        cfg.sl_iterations = 0;
        cfg.elite_fraction = 0.0;
        // Degenerate bounds: the single sample lands exactly here.
        let far = u0 + Vec3::new(0.0, 0.0, 0.4);
        cfg.workspace_bounds = Aabb { min: far, max: far };
        let mut ctrl = SldController::new(cfg);
        let w = LossWeights::default();
        let action = ctrl.plan(&sim, &rest, &belief, &u0, &w).unwrap();
        assert!(((action - u0).norm() - cfg.truncation).abs() < 1e-12);
        let dir = (action - u0).normalize();
        assert!((dir - Vec3::new(0.0, 0.0, 1.0)).norm() < 1e-12);
    }

    #[test]
    fn sld_zero_direction_guard() {
        let (sim, rest, belief, u0) = small_setup();
        let mut cfg = test_cfg();
        cfg.sample_count = 1;
        cfg.sl_iterations = 0;
        cfg.elite_fraction = 0.0;
        cfg.workspace_bounds = Aabb { min: u0, max: u0 };
        let mut ctrl = SldController::new(cfg);
        let w = LossWeights::default();
        let action = ctrl.plan(&sim, &rest, &belief, &u0, &w).unwrap();
        assert_eq!(action, u0);
    }

    #[test]
    fn sld_deterministic_and_carries_elites() {
        let (sim, rest, belief, u0) = small_setup();
        let mut cfg = test_cfg();
        cfg.sample_count = 10;
        cfg.sl_iterations = 1;
        cfg.elite_fraction = 0.2;
        let w = LossWeights::default();

        let mut c1 = SldController::new(cfg);
        let mut c2 = SldController::new(cfg);
        let mut state = rest.clone();
        for _ in 0..3 {
            let a1 = c1.plan(&sim, &state, &belief, &u0, &w).unwrap();
            let a2 = c2.plan(&sim, &state, &belief, &u0, &w).unwrap();
            assert_eq!(a1, a2, "same seed, same action sequence");
            state = sim.step(&state, &a1, &belief.mean).unwrap();
        }
        assert_eq!(c1.elites().len(), 2);

        // The retained elites open the next call's sample set verbatim.
        let kept = c1.elites().to_vec();
        let initial = c1.initial_samples();
        assert_eq!(&initial[..kept.len()], &kept[..]);
    }

    #[test]
    fn pmp_tie_breaks_by_declaration_order() {
        let (sim, rest, belief, u0) = small_setup();
        let primitives = PrimitiveSet::standard(0.02);
        let noise = NoiseConfig::default();
        // At rest every primitive moves the grasp, so entropies differ; to
        // force a tie, use a belief with zero covariance: J contributes
        // nothing and all predictions coincide.
        let flat = BoundaryBelief::uniform(9, 1e-4, 0.0);
        let choice = pmp_select(&sim, &rest, &flat, &u0, &primitives, &noise, 1e-5).unwrap();
        assert_eq!(choice.primitive_index, 0);
        let _ = belief;
    }

    #[test]
    fn pmp_prefers_informative_primitive_and_is_exhaustive() {
        // Grounded particle: pushing down is absorbed by the ground plane
        // (no displacement, no information), lifting displaces it.
        let mut cfg = SolverConfig::for_spacing(0.1);
        cfg.ground_plane_z = Some(0.0);
        let sim = Simulator {
            constraints: ConstraintSet {
                edges: vec![],
                bending: vec![],
                stiffness_mesh: 1.0,
                grasp: Some(Grasp {
                    springs: vec![GraspSpring { particle: 0, rest_length: 0.0 }],
                    stiffness: 1.0,
                }),
                boundary_anchors: vec![Vec3::zeros()],
            },
            cfg,
        };
        let rest = SimState::new(vec![Vec3::zeros()]);
        let belief = BoundaryBelief::uniform(1, 1e-4, 0.3);
        let primitives = PrimitiveSet {
            directions: vec![
                ("down", Vec3::new(0.0, 0.0, -1.0)),
                ("up", Vec3::new(0.0, 0.0, 1.0)),
            ],
            step: 0.05,
        };
        let noise = NoiseConfig::default();
        let u0 = Vec3::zeros();
        let choice = pmp_select(&sim, &rest, &belief, &u0, &primitives, &noise, 1e-5).unwrap();
        assert_eq!(choice.primitive_index, 1);
        let best = choice.predicted_entropies[choice.primitive_index];
        assert!(choice.predicted_entropies.iter().all(|&e| best <= e));
    }

    #[test]
    fn pmp_standard_set_excludes_downward() {
        let primitives = PrimitiveSet::<f64>::standard(0.01);
        for (_, d) in &primitives.directions {
            assert!(d[2] >= 0.0);
        }
        let b = DVec::from_element(1, 0.0);
        let _ = b;
    }
}
