//! Attachment-shape scenarios and their scripted grasp schedules.

use crate::mesh::{Mesh, ParticleMask};
use crate::{DVec, Real, Vec3};
use std::str::FromStr;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("unknown scenario name: {0}")]
    UnknownName(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScenarioName {
    Arc,
    Line,
    LineDot,
    ArcLine,
    UShape,
    LargeAttach,
}

impl ScenarioName {
    pub const ALL: [ScenarioName; 6] = [
        ScenarioName::Arc,
        ScenarioName::Line,
        ScenarioName::LineDot,
        ScenarioName::ArcLine,
        ScenarioName::UShape,
        ScenarioName::LargeAttach,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            ScenarioName::Arc => "arc",
            ScenarioName::Line => "line",
            ScenarioName::LineDot => "line-dot",
            ScenarioName::ArcLine => "arc-line",
            ScenarioName::UShape => "u-shape",
            ScenarioName::LargeAttach => "large-attach",
        }
    }
}

impl FromStr for ScenarioName {
    type Err = ScenarioError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "arc" => Ok(ScenarioName::Arc),
            "line" => Ok(ScenarioName::Line),
            "line-dot" | "linedot" | "line_dot" => Ok(ScenarioName::LineDot),
            "arc-line" | "arcline" | "arc_line" => Ok(ScenarioName::ArcLine),
            "u-shape" | "ushape" | "u_shape" => Ok(ScenarioName::UShape),
            "large-attach" | "largeattach" | "large_attach" => Ok(ScenarioName::LargeAttach),
            other => Err(ScenarioError::UnknownName(other.to_string())),
        }
    }
}

/// One grasp segment: grasp at `u0`, then move through `waypoints` one
/// solver step each.
#[derive(Debug, Clone)]
pub struct GraspPhase<T> {
    pub u0: Vec3<T>,
    pub waypoints: Vec<Vec3<T>>,
}

#[derive(Debug, Clone)]
pub struct Scenario<T> {
    pub name: ScenarioName,
    pub truth_mask: ParticleMask,
    pub ground_truth_b: DVec<T>,
    /// Scripted corner-lift schedule.
    pub grasp_sequence: Vec<GraspPhase<T>>,
    /// Default grasp point for single-grasp active sensing.
    pub active_grasp: Vec3<T>,
}

pub const ATTACHED_STIFFNESS: f64 = 0.1;

/// Rasterizes the named attachment shape onto the mesh and builds the
/// four-corner lift-and-return schedule.
pub fn make_scenario<T: Real>(
    name: ScenarioName,
    mesh: &Mesh<T>,
    lift_steps: usize,
) -> Scenario<T> {
    let truth_mask = shape_mask(name, mesh);
    let n = mesh.particle_count();
    let stiff = T::from_f64_lossy(ATTACHED_STIFFNESS);
    let ground_truth_b = DVec::from_fn(n, |i, _| if truth_mask.0[i] { stiff } else { T::zero() });

    let (rows, cols) = grid_dims(mesh);
    let corner_ids = [
        0,
        cols - 1,
        rows * cols - 1,
        (rows - 1) * cols,
    ];
    let width = mesh.width();
    let lift = width * T::from_f64_lossy(0.5);
    let grasp_sequence = corner_ids
        .iter()
        .map(|&c| {
            let u0 = mesh.rest_positions[c];
            let top = u0 + Vec3::new(T::zero(), T::zero(), lift);
            let mut waypoints = Vec::with_capacity(2 * lift_steps);
            for s in 1..=lift_steps {
                let t = T::from_usize(s).unwrap() / T::from_usize(lift_steps).unwrap();
                waypoints.push(u0 + (top - u0) * t);
            }
            for s in 1..=lift_steps {
                let t = T::from_usize(s).unwrap() / T::from_usize(lift_steps).unwrap();
                waypoints.push(top + (u0 - top) * t);
            }
            GraspPhase { u0, waypoints }
        })
        .collect();

    let center = mesh.rest_positions[mesh.nearest_particle(&center_point(mesh))];
    Scenario {
        name,
        truth_mask,
        ground_truth_b,
        grasp_sequence,
        active_grasp: center,
    }
}

fn center_point<T: Real>(mesh: &Mesh<T>) -> Vec3<T> {
    let mut lo = mesh.rest_positions[0];
    let mut hi = mesh.rest_positions[0];
    for p in &mesh.rest_positions {
        for a in 0..3 {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
    }
    (lo + hi) * T::from_f64_lossy(0.5)
}

/// Infers rows/cols of a grid mesh from its rest layout.
fn grid_dims<T: Real>(mesh: &Mesh<T>) -> (usize, usize) {
    let y0 = mesh.rest_positions[0][1];
    let cols = mesh
        .rest_positions
        .iter()
        .take_while(|p| p[1] == y0)
        .count();
    (mesh.particle_count() / cols, cols)
}

/// Nearest-particle rasterization of a polyline sampled densely.
fn rasterize_curve<T: Real>(mesh: &Mesh<T>, points: &[Vec3<T>]) -> Vec<usize> {
    let mut picked = Vec::new();
    for p in points {
        let i = mesh.nearest_particle(p);
        if !picked.contains(&i) {
            picked.push(i);
        }
    }
    picked.sort_unstable();
    picked
}

fn arc_points<T: Real>(center: Vec3<T>, radius: T, from: f64, to: f64, n: usize) -> Vec<Vec3<T>> {
    (0..=n)
        .map(|s| {
            let theta = from + (to - from) * s as f64 / n as f64;
            center
                + Vec3::new(
                    radius * T::from_f64_lossy(theta.cos()),
                    radius * T::from_f64_lossy(theta.sin()),
                    T::zero(),
                )
        })
        .collect()
}

fn shape_mask<T: Real>(name: ScenarioName, mesh: &Mesh<T>) -> ParticleMask {
    let (rows, cols) = grid_dims(mesh);
    let n = mesh.particle_count();
    let idx = |r: usize, c: usize| r * cols + c;
    let w = mesh.width();
    let half = w * T::from_f64_lossy(0.5);
    let origin = mesh.rest_positions[0];
    let samples = 20 * (rows + cols);

    let indices: Vec<usize> = match name {
        ScenarioName::Line => (0..cols).map(|c| idx(0, c)).collect(),
        ScenarioName::Arc => {
            // Semicircle spanning the bottom edge, bulging to mid-mesh.
            let center = origin + Vec3::new(half, T::zero(), T::zero());
            rasterize_curve(mesh, &arc_points(center, half, 0.0, std::f64::consts::PI, samples))
        }
        ScenarioName::LineDot => {
            let mut v: Vec<usize> = (0..cols).map(|c| idx(0, c)).collect();
            let dot = idx(3 * (rows - 1) / 4, cols / 2);
            if !v.contains(&dot) {
                v.push(dot);
            }
            v.sort_unstable();
            v
        }
        ScenarioName::ArcLine => {
            // Half-width arc continuing into a straight run along the edge.
            let quarter = w * T::from_f64_lossy(0.25);
            let center = origin + Vec3::new(quarter, T::zero(), T::zero());
            let mut pts = arc_points(center, quarter, std::f64::consts::PI, 0.0, samples);
            let from = origin + Vec3::new(half, T::zero(), T::zero());
            let to = origin + Vec3::new(w, T::zero(), T::zero());
            for s in 0..=samples {
                let t = T::from_usize(s).unwrap() / T::from_usize(samples).unwrap();
                pts.push(from + (to - from) * t);
            }
            rasterize_curve(mesh, &pts)
        }
        ScenarioName::UShape => {
            let mut v: Vec<usize> = (0..cols).map(|c| idx(0, c)).collect();
            v.extend((0..rows).map(|r| idx(r, 0)));
            v.extend((0..rows).map(|r| idx(r, cols - 1)));
            v.sort_unstable();
            v.dedup();
            v
        }
        ScenarioName::LargeAttach => {
            let mut v = Vec::new();
            for r in rows / 4..(3 * rows).div_ceil(4) {
                for c in cols / 4..(3 * cols).div_ceil(4) {
                    v.push(idx(r, c));
                }
            }
            v
        }
    };
    ParticleMask::from_indices(n, &indices)
}
