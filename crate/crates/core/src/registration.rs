//! Point-cloud-driven joint state and parameter estimation. Synthetic
//! clouds sampled from a hidden ground-truth state stand in for the
//! perception pipeline.

use crate::estimator::{
    ekf_update, BoundaryBelief, EkfUpdate, EstimatorError, NoiseConfig, ObservationLog,
    UpdateOptions,
};
use crate::mesh::Mesh;
use crate::sim::{SimError, SimState, Simulator, StepStats};
use crate::{Real, Vec3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use std::io::{BufRead, Write};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RegistrationError {
    #[error("point cloud is empty")]
    EmptyCloud,
    #[error("no multiple-shooting samples supplied")]
    NoSamples,
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed xyz line {line}")]
    Parse { line: usize },
}

#[derive(Debug, Clone)]
pub struct PointCloud<T> {
    pub points: Vec<Vec3<T>>,
    pub frame_index: usize,
}

impl<T: Real> PointCloud<T> {
    pub fn new(points: Vec<Vec3<T>>) -> Self {
        PointCloud {
            points,
            frame_index: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// One `x y z` triple per line.
    pub fn write_xyz(&self, path: &Path) -> Result<(), RegistrationError> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        for p in &self.points {
            writeln!(f, "{} {} {}", p[0], p[1], p[2])?;
        }
        Ok(())
    }

    pub fn read_xyz(path: &Path) -> Result<Self, RegistrationError> {
        let f = std::io::BufReader::new(std::fs::File::open(path)?);
        let mut points = Vec::new();
        for (i, line) in f.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let mut it = line.split_whitespace();
            let mut coords = [T::zero(); 3];
            for c in &mut coords {
                *c = it
                    .next()
                    .and_then(|t| t.parse::<f64>().ok())
                    .map(T::from_f64_lossy)
                    .ok_or(RegistrationError::Parse { line: i + 1 })?;
            }
            points.push(Vec3::new(coords[0], coords[1], coords[2]));
        }
        Ok(PointCloud::new(points))
    }
}

/// Fixed barycentric surface samples: each point is a convex combination
/// of its face's vertices, so positions (and gradients) follow the mesh
/// linearly through the weights.
#[derive(Debug, Clone)]
pub struct SurfaceSamples<T> {
    pub faces: Vec<usize>,
    pub weights: Vec<[T; 3]>,
    face_vertices: Vec<[usize; 3]>,
}

impl<T: Real> SurfaceSamples<T> {
    /// Area-weighted sampling on the faces of the given configuration.
    pub fn draw(mesh: &Mesh<T>, state: &SimState<T>, count: usize, seed: u64) -> Self {
        assert!(count >= 1);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let areas: Vec<f64> = mesh
            .faces
            .iter()
            .map(|f| {
                let a = state.positions[f[0]];
                let b = state.positions[f[1]];
                let c = state.positions[f[2]];
                let cross = (b - a).cross(&(c - a));
                0.5 * cross.norm().to_subset().unwrap_or(0.0)
            })
            .collect();
        let total: f64 = areas.iter().sum();
        let mut cumulative = Vec::with_capacity(areas.len());
        let mut acc = 0.0;
        for a in &areas {
            acc += a;
            cumulative.push(acc);
        }

        let mut faces = Vec::with_capacity(count);
        let mut weights = Vec::with_capacity(count);
        for _ in 0..count {
            let r = rng.gen_range(0.0..total.max(f64::MIN_POSITIVE));
            let face = cumulative.partition_point(|&c| c < r).min(areas.len() - 1);
            let mut u: f64 = rng.gen_range(0.0..1.0);
            let mut v: f64 = rng.gen_range(0.0..1.0);
            if u + v > 1.0 {
                u = 1.0 - u;
                v = 1.0 - v;
            }
            faces.push(face);
            weights.push([
                T::from_f64_lossy(1.0 - u - v),
                T::from_f64_lossy(u),
                T::from_f64_lossy(v),
            ]);
        }
        SurfaceSamples {
            faces,
            weights,
            face_vertices: mesh.faces.clone(),
        }
    }

    pub fn len(&self) -> usize {
        self.faces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.faces.is_empty()
    }

    pub fn points(&self, positions: &[Vec3<T>]) -> Vec<Vec3<T>> {
        self.faces
            .iter()
            .zip(&self.weights)
            .map(|(&f, w)| {
                let verts = self.face_vertices[f];
                positions[verts[0]] * w[0] + positions[verts[1]] * w[1] + positions[verts[2]] * w[2]
            })
            .collect()
    }
}

/// Area-weighted barycentric point samples of the current surface.
pub fn sample_surface_points<T: Real>(
    mesh: &Mesh<T>,
    state: &SimState<T>,
    count: usize,
    seed: u64,
) -> PointCloud<T> {
    let samples = SurfaceSamples::draw(mesh, state, count, seed);
    PointCloud::new(samples.points(&state.positions))
}

/// Samples of the hidden ground-truth surface plus isotropic Gaussian
/// noise, substituting for a perception pipeline.
pub fn synth_observation<T: Real>(
    mesh: &Mesh<T>,
    ground_truth: &SimState<T>,
    noise_sigma: T,
    count: usize,
    seed: u64,
) -> PointCloud<T> {
    let mut cloud = sample_surface_points(mesh, ground_truth, count, seed);
    let sigma = noise_sigma.to_subset().unwrap_or(0.0);
    if sigma > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
        let normal = Normal::new(0.0, sigma).expect("valid sigma");
        for p in &mut cloud.points {
            for a in 0..3 {
                p[a] += T::from_f64_lossy(normal.sample(&mut rng));
            }
        }
    }
    cloud
}

fn nearest<T: Real>(p: &Vec3<T>, cloud: &[Vec3<T>]) -> (usize, T) {
    let mut best = 0;
    let mut best_d = (cloud[0] - p).norm_squared();
    for (i, q) in cloud.iter().enumerate().skip(1) {
        let d = (q - p).norm_squared();
        // Ties go to the lowest index.
        if d < best_d {
            best = i;
            best_d = d;
        }
    }
    (best, best_d)
}

/// Symmetric chamfer distance: both directed sums of squared
/// nearest-neighbor distances.
pub fn chamfer<T: Real>(p: &PointCloud<T>, q: &PointCloud<T>) -> Result<T, RegistrationError> {
    if p.is_empty() || q.is_empty() {
        return Err(RegistrationError::EmptyCloud);
    }
    let forward: T = p
        .points
        .iter()
        .map(|pt| nearest(pt, &q.points).1)
        .fold(T::zero(), |a, b| a + b);
    let backward: T = q
        .points
        .iter()
        .map(|qt| nearest(qt, &p.points).1)
        .fold(T::zero(), |a, b| a + b);
    Ok(forward + backward)
}

/// Gradient of the chamfer distance with respect to vertex positions,
/// chained through the fixed barycentric weights. Correspondences are
/// frozen for the evaluation.
pub fn chamfer_gradient<T: Real>(
    positions: &[Vec3<T>],
    samples: &SurfaceSamples<T>,
    q: &PointCloud<T>,
) -> Vec<Vec3<T>> {
    let p_points = samples.points(positions);
    let mut point_grad = vec![Vec3::zeros(); p_points.len()];
    let two = T::from_f64_lossy(2.0);
    for (i, p) in p_points.iter().enumerate() {
        let (j, _) = nearest(p, &q.points);
        point_grad[i] += (p - q.points[j]) * two;
    }
    for qt in &q.points {
        let (i, _) = nearest(qt, &p_points);
        point_grad[i] += (p_points[i] - qt) * two;
    }
    let mut vertex_grad = vec![Vec3::zeros(); positions.len()];
    for (s, g) in point_grad.iter().enumerate() {
        let verts = samples.face_vertices[samples.faces[s]];
        let w = samples.weights[s];
        for k in 0..3 {
            vertex_grad[verts[k]] += g * w[k];
        }
    }
    vertex_grad
}

#[derive(Debug, Clone, Copy)]
pub struct RegistrationConfig<T> {
    /// Initial step size of the chamfer pull inside the solver loop.
    pub alpha_step: T,
    /// Multiplicative decay of the pull per sweep.
    pub alpha_decay: T,
    /// Surface samples per registration step.
    pub sample_count: usize,
    pub seed: u64,
    /// Alternation rounds of the joint estimation.
    pub rounds: usize,
}

impl<T: Real> Default for RegistrationConfig<T> {
    fn default() -> Self {
        RegistrationConfig {
            alpha_step: T::from_f64_lossy(0.05),
            alpha_decay: T::from_f64_lossy(0.9),
            sample_count: 1000,
            seed: 0,
            rounds: 2,
        }
    }
}

/// XPBD step with the chamfer gradient subtracted after every sweep.
/// `alpha_step = 0` reduces bit-exactly to the plain step.
pub fn step_with_residual<T: Real>(
    sim: &Simulator<T>,
    mesh: &Mesh<T>,
    state: &SimState<T>,
    u: &Vec3<T>,
    b: &crate::DVec<T>,
    q: &PointCloud<T>,
    cfg: &RegistrationConfig<T>,
) -> Result<(SimState<T>, StepStats), RegistrationError> {
    if cfg.alpha_step == T::zero() {
        return Ok(sim.step_with_position_pull(state, u, b, |_, _| {})?);
    }
    if q.is_empty() {
        return Err(RegistrationError::EmptyCloud);
    }
    let samples = SurfaceSamples::draw(mesh, state, cfg.sample_count, cfg.seed);
    // The chamfer gradient sums over every sample point; normalize by the
    // pairing count so the pull strength is independent of cloud density.
    let scale = T::from_usize(samples.len() + q.len()).unwrap();
    let out = sim.step_with_position_pull(state, u, b, |sweep, x| {
        let mut alpha = cfg.alpha_step / scale;
        for _ in 0..sweep {
            alpha *= cfg.alpha_decay;
        }
        let grad = chamfer_gradient(x, &samples, q);
        for (xi, g) in x.iter_mut().zip(&grad) {
            *xi -= g * alpha;
        }
    })?;
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct JointEstimate<T> {
    pub belief: BoundaryBelief<T>,
    /// Registered reference state of the latest transition.
    pub registered: SimState<T>,
    pub aborted: bool,
}

/// Alternates point-cloud registration of the sampled transitions with the
/// EKF update, re-running the update from the predicted prior each round.
/// `log` holds the registered states so far; `clouds[m]` observes the state
/// after transition `m`.
#[allow(clippy::too_many_arguments)]
pub fn joint_estimate<T: Real>(
    belief: &BoundaryBelief<T>,
    sim: &Simulator<T>,
    mesh: &Mesh<T>,
    log: &mut ObservationLog<T>,
    clouds: &[PointCloud<T>],
    samples: &[usize],
    noise: &NoiseConfig<T>,
    opts: &UpdateOptions<T>,
    cfg: &RegistrationConfig<T>,
) -> Result<JointEstimate<T>, RegistrationError> {
    if samples.is_empty() {
        return Err(RegistrationError::NoSamples);
    }
    let mut current = belief.clone();
    let mut update: Option<EkfUpdate<T>> = None;
    for round in 0..cfg.rounds.max(1) {
        for &m in samples {
            if m >= log.len() {
                return Err(RegistrationError::Estimator(
                    EstimatorError::SampleOutOfRange { sample: m },
                ));
            }
            let reg_cfg = RegistrationConfig {
                seed: cfg.seed ^ ((m as u64) << 8) ^ round as u64,
                ..*cfg
            };
            let (registered, _) = step_with_residual(
                sim,
                mesh,
                &log.states[m].clone(),
                &log.actions[m].clone(),
                &current.mean,
                &clouds[m],
                &reg_cfg,
            )?;
            log.states[m + 1] = registered;
        }
        let out = ekf_update(belief, sim, log, samples, noise, opts)?;
        current = out.belief.clone();
        update = Some(out);
    }
    let out = update.expect("at least one round");
    let last = *samples.iter().max().unwrap();
    Ok(JointEstimate {
        belief: out.belief,
        registered: log.states[last + 1].clone(),
        aborted: out.aborted,
    })
}
