//! Reference robots used throughout the experiments.

use crate::framework::{Configuration, FrameworkGraph};
use crate::Result;

/// Ground-contact vertices of [`octahedron`].
pub const OCTAHEDRON_FEET: [usize; 3] = [0, 1, 2];

/// Regular octahedron with unit edges resting on a face.
///
/// Vertices 0..3 form the bottom face at `z = 0`, vertices 3..6 the top face
/// at `z = sqrt(2/3)`, rotated by 60 degrees. Each top vertex joins the two
/// nearest bottom vertices.
pub fn octahedron() -> Result<(FrameworkGraph, Configuration)> {
    let rho = 1.0 / 3f64.sqrt();
    let h = (2.0f64 / 3.0).sqrt();
    let at = |deg: f64, z: f64| {
        let t = deg.to_radians();
        vec![rho * t.cos(), rho * t.sin(), z]
    };
    let points = vec![
        at(90.0, 0.0),
        at(210.0, 0.0),
        at(330.0, 0.0),
        at(150.0, h),
        at(270.0, h),
        at(30.0, h),
    ];
    let edges = vec![
        [0, 1],
        [1, 2],
        [2, 0],
        [3, 4],
        [4, 5],
        [5, 3],
        [3, 0],
        [3, 1],
        [4, 1],
        [4, 2],
        [5, 2],
        [5, 0],
    ];
    Ok((FrameworkGraph::new(6, 3, edges)?, Configuration::from_points(3, &points)?))
}

/// Planar six-node, nine-edge truss: a triangle of three stacked rows.
///
/// Vertex 5 is the top node.
pub fn six_node_planar() -> Result<(FrameworkGraph, Configuration)> {
    let s = 3f64.sqrt() / 2.0;
    let points = vec![
        vec![0.0, 0.0],
        vec![1.0, 0.0],
        vec![2.0, 0.0],
        vec![0.5, s],
        vec![1.5, s],
        vec![1.0, 2.0 * s],
    ];
    let edges = [[1, 2], [2, 3], [1, 4], [2, 4], [2, 5], [3, 5], [4, 5], [4, 6], [5, 6]];
    Ok((FrameworkGraph::from_one_based(6, 2, &edges)?, Configuration::from_points(2, &points)?))
}
