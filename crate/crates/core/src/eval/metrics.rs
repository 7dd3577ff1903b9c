use crate::error::{Error, Result};
use crate::geometry::{procrustes_align, Pose3D, HAND_JOINTS, NUM_POINTS};

/// Points over which an error is averaged.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum PointGroup {
    Hand,
    Object,
    All,
    /// Explicit point indices, e.g. `[0]` for wrist-only hand evaluation.
    Custom(Vec<usize>),
}

impl PointGroup {
    pub fn wrist() -> Self {
        Self::Custom(vec![0])
    }

    pub fn indices(&self) -> Vec<usize> {
        match self {
            Self::Hand => (0..HAND_JOINTS).collect(),
            Self::Object => (HAND_JOINTS..NUM_POINTS).collect(),
            Self::All => (0..NUM_POINTS).collect(),
            Self::Custom(v) => v.clone(),
        }
    }
}

/// Distance of every point after aligning `estimate` to `reference` with one
/// similarity transform over all points.
pub fn aligned_errors(estimate: &Pose3D, reference: &Pose3D) -> Result<Vec<f64>> {
    let aligned = procrustes_align(estimate, reference)?;
    Ok((0..NUM_POINTS).map(|i| (aligned.point(i) - reference.point(i)).norm()).collect())
}

fn check(estimates: &[Pose3D], references: &[Pose3D], group: &PointGroup) -> Result<Vec<usize>> {
    if estimates.is_empty() {
        return Err(Error::EmptySet);
    }
    if estimates.len() != references.len() {
        return Err(Error::shape(format!("{} references", estimates.len()), references.len().to_string()));
    }
    let idx = group.indices();
    if idx.is_empty() {
        return Err(Error::EmptySet);
    }
    if let Some(&bad) = idx.iter().find(|&&i| i >= NUM_POINTS) {
        return Err(Error::validation("group", format!("point index {bad} out of range")));
    }
    Ok(idx)
}

/// Procrustes-aligned mean per joint position error in millimeters.
pub fn mpjpe(estimates: &[Pose3D], references: &[Pose3D], group: &PointGroup) -> Result<f64> {
    let idx = check(estimates, references, group)?;
    let mut total = 0.0;
    for (e, r) in estimates.iter().zip(references) {
        let err = aligned_errors(e, r)?;
        total += idx.iter().map(|&i| err[i]).sum::<f64>() / idx.len() as f64;
    }
    Ok(total / estimates.len() as f64)
}

/// Thresholds 0, 1, ..., 50 mm.
pub fn default_thresholds() -> Vec<f64> {
    (0..=50).map(f64::from).collect()
}

/// Slack (mm) added to every PCK threshold to absorb alignment round-off.
pub const PCK_TOLERANCE: f64 = 1e-9;

/// Fraction of aligned keypoint errors `<= t` for every threshold, up to
/// [`PCK_TOLERANCE`].
pub fn pck_curve(
    estimates: &[Pose3D],
    references: &[Pose3D],
    thresholds: &[f64],
    group: &PointGroup,
) -> Result<Vec<f64>> {
    let idx = check(estimates, references, group)?;
    let mut errors = Vec::with_capacity(estimates.len() * idx.len());
    for (e, r) in estimates.iter().zip(references) {
        let err = aligned_errors(e, r)?;
        errors.extend(idx.iter().map(|&i| err[i]));
    }
    errors.sort_by(f64::total_cmp);
    let n = errors.len() as f64;
    Ok(thresholds.iter().map(|&t| errors.partition_point(|&e| e <= t + PCK_TOLERANCE) as f64 / n).collect())
}
