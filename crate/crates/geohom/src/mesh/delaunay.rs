//! Classical Delaunay triangulation: the equal-weight regular triangulation.

use super::weighted::{weighted_delaunay, RegularTriangulation, WeightedPointSet};
use super::MeshError;
use crate::Point2;

/// Delaunay triangulation of a point set (paraboloid lift of the lower-hull
/// construction). All points appear in the output.
pub fn delaunay_triangulation(points: &[Point2]) -> Result<RegularTriangulation, MeshError> {
    weighted_delaunay(&WeightedPointSet::unweighted(points.to_vec()))
}
