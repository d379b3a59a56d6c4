//! Triangulated thin-shell mesh: grid construction, topology queries, and
//! the graph dilation used by metrics and grasp selection.

use crate::{Real, Vec3};
use std::io::Write;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("grid dimensions must be at least 2x2, got {rows}x{cols}")]
    InvalidDimension { rows: usize, cols: usize },
    #[error("grid spacing must be positive")]
    InvalidSpacing,
    #[error("no particle within radius {radius} of the grasp point")]
    GraspMiss { radius: f64 },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// A distance-constrained particle pair with its rest length.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge<T> {
    pub i: usize,
    pub j: usize,
    pub rest_length: T,
}

/// Immutable triangulated mesh. Constructed once, shared freely.
#[derive(Debug, Clone)]
pub struct Mesh<T> {
    pub rest_positions: Vec<Vec3<T>>,
    /// Structural edges plus one diagonal per quad.
    pub edges: Vec<Edge<T>>,
    pub faces: Vec<[usize; 3]>,
    /// Cross-edge springs between the two vertices opposite a shared edge.
    pub bending_pairs: Vec<Edge<T>>,
    /// Neighbor lists over `edges` only (the mesh graph used for dilation).
    pub adjacency: Vec<Vec<usize>>,
}

impl<T: Real> Mesh<T> {
    pub fn particle_count(&self) -> usize {
        self.rest_positions.len()
    }

    /// Largest axis-aligned extent of the rest pose.
    pub fn width(&self) -> T {
        let mut lo = self.rest_positions[0];
        let mut hi = self.rest_positions[0];
        for p in &self.rest_positions {
            for a in 0..3 {
                lo[a] = lo[a].min(p[a]);
                hi[a] = hi[a].max(p[a]);
            }
        }
        let d = hi - lo;
        d[0].max(d[1]).max(d[2])
    }

    pub fn min_edge_length(&self) -> T {
        self.edges
            .iter()
            .map(|e| e.rest_length)
            .fold(T::max_value().unwrap(), |a, b| a.min(b))
    }

    /// Index of the particle whose rest position is nearest to `p`.
    pub fn nearest_particle(&self, p: &Vec3<T>) -> usize {
        let mut best = 0;
        let mut best_d = (self.rest_positions[0] - p).norm_squared();
        for (i, q) in self.rest_positions.iter().enumerate().skip(1) {
            let d = (q - p).norm_squared();
            if d < best_d {
                best = i;
                best_d = d;
            }
        }
        best
    }

    /// Mesh snapshot in Wavefront OBJ vertex/face format.
    pub fn write_obj(&self, positions: &[Vec3<T>], path: &Path) -> Result<(), MeshError> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        for p in positions {
            writeln!(f, "v {} {} {}", p[0], p[1], p[2])?;
        }
        for face in &self.faces {
            writeln!(f, "f {} {} {}", face[0] + 1, face[1] + 1, face[2] + 1)?;
        }
        Ok(())
    }
}

/// Per-particle scalar sidecar for mesh snapshots: `particle_index,value`.
pub fn write_scalar_csv<T: Real>(values: &[T], path: &Path) -> Result<(), MeshError> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "particle_index,value")?;
    for (i, v) in values.iter().enumerate() {
        writeln!(f, "{},{}", i, v)?;
    }
    Ok(())
}

/// Boolean flag per particle.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParticleMask(pub Vec<bool>);

impl ParticleMask {
    pub fn empty(n: usize) -> Self {
        ParticleMask(vec![false; n])
    }

    pub fn from_indices(n: usize, indices: &[usize]) -> Self {
        let mut flags = vec![false; n];
        for &i in indices {
            flags[i] = true;
        }
        ParticleMask(flags)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn count(&self) -> usize {
        self.0.iter().filter(|&&b| b).count()
    }

    pub fn indices(&self) -> Vec<usize> {
        self.0
            .iter()
            .enumerate()
            .filter_map(|(i, &b)| b.then_some(i))
            .collect()
    }

    pub fn contains(&self, other: &ParticleMask) -> bool {
        self.0
            .iter()
            .zip(&other.0)
            .all(|(&mine, &theirs)| mine || !theirs)
    }
}

/// Planar grid in the z=0 plane: structural edges, one diagonal per quad
/// with alternating orientation, and a bending pair across every interior
/// edge. Particle `(row, col)` has index `row * cols + col`.
pub fn build_grid_mesh<T: Real>(rows: usize, cols: usize, spacing: T) -> Result<Mesh<T>, MeshError> {
    if rows < 2 || cols < 2 {
        return Err(MeshError::InvalidDimension { rows, cols });
    }
    if spacing <= T::zero() {
        return Err(MeshError::InvalidSpacing);
    }
    let n = rows * cols;
    let idx = |r: usize, c: usize| r * cols + c;

    let mut rest_positions = Vec::with_capacity(n);
    for r in 0..rows {
        for c in 0..cols {
            rest_positions.push(Vec3::new(
                T::from_usize(c).unwrap() * spacing,
                T::from_usize(r).unwrap() * spacing,
                T::zero(),
            ));
        }
    }

    let mut edges = Vec::new();
    let push_edge = |edges: &mut Vec<Edge<T>>, i: usize, j: usize| {
        let rest_length = (rest_positions[i] - rest_positions[j]).norm();
        edges.push(Edge { i, j, rest_length });
    };
    for r in 0..rows {
        for c in 0..cols.saturating_sub(1) {
            push_edge(&mut edges, idx(r, c), idx(r, c + 1));
        }
    }
    for r in 0..rows.saturating_sub(1) {
        for c in 0..cols {
            push_edge(&mut edges, idx(r, c), idx(r + 1, c));
        }
    }

    let mut faces = Vec::new();
    for r in 0..rows - 1 {
        for c in 0..cols - 1 {
            let (a, b, d, e) = (idx(r, c), idx(r, c + 1), idx(r + 1, c), idx(r + 1, c + 1));
            if (r + c) % 2 == 0 {
                push_edge(&mut edges, a, e);
                faces.push([a, b, e]);
                faces.push([a, e, d]);
            } else {
                push_edge(&mut edges, b, d);
                faces.push([a, b, d]);
                faces.push([b, e, d]);
            }
        }
    }

    let bending_pairs = bending_pairs_from_faces(&rest_positions, &faces);

    let mut adjacency = vec![Vec::new(); n];
    for e in &edges {
        adjacency[e.i].push(e.j);
        adjacency[e.j].push(e.i);
    }
    for list in &mut adjacency {
        list.sort_unstable();
        list.dedup();
    }

    Ok(Mesh {
        rest_positions,
        edges,
        faces,
        bending_pairs,
        adjacency,
    })
}

/// For every edge shared by exactly two faces, connect the two opposite
/// vertices with a distance constraint at their rest separation.
fn bending_pairs_from_faces<T: Real>(
    rest_positions: &[Vec3<T>],
    faces: &[[usize; 3]],
) -> Vec<Edge<T>> {
    use std::collections::HashMap;
    let mut edge_faces: HashMap<(usize, usize), Vec<usize>> = HashMap::new();
    for (f, face) in faces.iter().enumerate() {
        for k in 0..3 {
            let (a, b) = (face[k], face[(k + 1) % 3]);
            let key = (a.min(b), a.max(b));
            edge_faces.entry(key).or_default().push(f);
        }
    }
    let mut keys: Vec<_> = edge_faces
        .iter()
        .filter(|(_, fs)| fs.len() == 2)
        .map(|(&k, _)| k)
        .collect();
    keys.sort_unstable();

    let mut pairs = Vec::new();
    for key in keys {
        let fs = &edge_faces[&key];
        let opposite = |f: usize| {
            faces[f]
                .iter()
                .copied()
                .find(|&v| v != key.0 && v != key.1)
                .expect("triangle face")
        };
        let (i, j) = (opposite(fs[0]), opposite(fs[1]));
        let rest_length = (rest_positions[i] - rest_positions[j]).norm();
        pairs.push(Edge {
            i: i.min(j),
            j: i.max(j),
            rest_length,
        });
    }
    pairs
}

/// One graph-convolution step per iteration: a particle turns on if any
/// neighbor was on. Result always contains the input mask.
pub fn dilate_mask<T: Real>(mesh: &Mesh<T>, mask: &ParticleMask, iterations: usize) -> ParticleMask {
    assert_eq!(mask.len(), mesh.particle_count(), "mask length mismatch");
    let mut current = mask.0.clone();
    for _ in 0..iterations {
        let mut next = current.clone();
        for (i, flags) in next.iter_mut().enumerate() {
            if !*flags && mesh.adjacency[i].iter().any(|&j| current[j]) {
                *flags = true;
            }
        }
        current = next;
    }
    ParticleMask(current)
}

/// Particles whose rest position lies strictly within `r` of `u0`.
pub fn grasp_neighborhood<T: Real>(
    mesh: &Mesh<T>,
    u0: &Vec3<T>,
    r: T,
) -> Result<Vec<usize>, MeshError> {
    assert!(r > T::zero(), "grasp radius must be positive");
    let picked: Vec<usize> = mesh
        .rest_positions
        .iter()
        .enumerate()
        .filter_map(|(i, p)| ((p - u0).norm() < r).then_some(i))
        .collect();
    if picked.is_empty() {
        return Err(MeshError::GraspMiss {
            radius: r.to_subset().unwrap_or(f64::NAN),
        });
    }
    Ok(picked)
}
