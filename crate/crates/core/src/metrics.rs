//! Detection accuracy metrics with graph dilation.

use crate::mesh::{dilate_mask, Mesh, ParticleMask};
use crate::{DVec, Real};

/// Percentage of correct detections and percentage of uncovered ground
/// truth. Particles with mean stiffness above `b_thresh` count as detected;
/// the truth is dilated for PCD and the detections for PUG. `None` marks
/// the undefined cases (no detections, empty truth).
pub fn pcd_pug<T: Real>(
    estimate_mean: &DVec<T>,
    truth: &ParticleMask,
    b_thresh: T,
    dilation: usize,
    mesh: &Mesh<T>,
) -> (Option<T>, Option<T>) {
    assert!(b_thresh > T::zero());
    let n = mesh.particle_count();
    let detections = ParticleMask(
        (0..n)
            .map(|i| estimate_mean[i] > b_thresh)
            .collect(),
    );
    let hundred = T::from_f64_lossy(100.0);

    let pcd = if detections.count() == 0 {
        None
    } else {
        let truth_wide = dilate_mask(mesh, truth, dilation);
        let correct = detections
            .0
            .iter()
            .zip(&truth_wide.0)
            .filter(|(&d, &t)| d && t)
            .count();
        Some(hundred * T::from_usize(correct).unwrap() / T::from_usize(detections.count()).unwrap())
    };

    let pug = if truth.count() == 0 {
        None
    } else {
        let det_wide = dilate_mask(mesh, &detections, dilation);
        let covered = det_wide
            .0
            .iter()
            .zip(&truth.0)
            .filter(|(&d, &t)| d && t)
            .count();
        Some(hundred * T::from_usize(covered).unwrap() / T::from_usize(truth.count()).unwrap())
    };

    (pcd, pug)
}
