//! A truss robot or an isoperimetric robot behind one interface.

use truss_core::isoperimetric::IsoperimetricRobot;
use truss_core::FrameworkGraph;

/// The kinematic model a scenario runs on.
///
/// Consensus agents are the vertices of a truss robot and the nodes (passive
/// node or roller module) of an isoperimetric robot.
#[derive(Debug, Clone)]
pub enum Robot {
    Truss(FrameworkGraph),
    Isoperimetric(IsoperimetricRobot),
}

impl Robot {
    /// The graph over kinematic points.
    pub fn graph(&self) -> &FrameworkGraph {
        match self {
            Robot::Truss(g) => g,
            Robot::Isoperimetric(r) => r.graph(),
        }
    }

    pub fn dim(&self) -> usize {
        self.graph().dim()
    }

    pub fn point_count(&self) -> usize {
        self.graph().n()
    }

    pub fn agent_count(&self) -> usize {
        match self {
            Robot::Truss(g) => g.n(),
            Robot::Isoperimetric(r) => r.agent_count(),
        }
    }

    pub fn agent_points(&self, agent: usize) -> Vec<usize> {
        match self {
            Robot::Truss(_) => vec![agent],
            Robot::Isoperimetric(r) => r.agents()[agent].clone(),
        }
    }

    /// The point a node command moves.
    pub fn representative_point(&self, agent: usize) -> usize {
        match self {
            Robot::Truss(_) => agent,
            Robot::Isoperimetric(r) => r.representative_point(agent),
        }
    }

    pub fn agent_of_point(&self, p: usize) -> Option<usize> {
        match self {
            Robot::Truss(g) => (p < g.n()).then_some(p),
            Robot::Isoperimetric(r) => r.agent_of_point(p),
        }
    }

    pub fn as_isoperimetric(&self) -> Option<&IsoperimetricRobot> {
        match self {
            Robot::Isoperimetric(r) => Some(r),
            Robot::Truss(_) => None,
        }
    }
}
