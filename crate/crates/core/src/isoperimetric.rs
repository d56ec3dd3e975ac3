//! Isoperimetric robots: a single constant-length tube forms every edge and
//! roller modules drive along it, so growing one edge shrinks its neighbour.
//!
//! Positions along the tube are measured from the tube start, which sits at
//! a stationary passive node together with the tube end. A tube segment ends
//! at either the tube start, the tube end, or a roller (plus a fixed offset
//! for modules that pinch the tube at two points), so every segment length is
//! affine in the roller positions: `L = B r + c`.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::admm::{ConsensusProblem, Hyperparams, LocalConstraint, LocalCost, NodeSpec, QuadraticCost, SmoothCost};
use crate::control::{lower_constraints, objective_costs, ControlObjective, VelocityConstraint};
use crate::estimation::{AnchorSpec, LengthResidualCost, LengthTerm};
use crate::framework::{edge_lengths, rigidity_matrix, Configuration, FrameworkGraph};
use crate::linalg::{lstsq, numeric_rank, reduce_rows};
use crate::{Error, Result};

/// Q residuals above this trigger a projection back onto the constraint set.
pub const PROJECTION_THRESHOLD: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum TubeMark {
    Start,
    End,
    /// `offset` meters past roller `roller`.
    Roller { roller: usize, offset: f64 },
}

/// A stretch of tube between two graph vertices.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TubeSegment {
    pub from: usize,
    pub to: usize,
    pub begin: TubeMark,
    pub end: TubeMark,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TubeLayout {
    segments: Vec<TubeSegment>,
    rollers: usize,
    l_tot: f64,
}

impl TubeLayout {
    pub fn new(segments: Vec<TubeSegment>, rollers: usize, l_tot: f64) -> Result<Self> {
        if !(l_tot > 0.0) {
            return Err(Error::InvalidArgument(format!("tube length must be positive, got {l_tot}")));
        }
        if segments.is_empty() {
            return Err(Error::InvalidArgument("tube has no segments".into()));
        }
        for s in &segments {
            for m in [s.begin, s.end] {
                if let TubeMark::Roller { roller, .. } = m {
                    if roller >= rollers {
                        return Err(Error::InvalidArgument(format!("segment references roller {roller}")));
                    }
                }
            }
        }
        for w in segments.windows(2) {
            if w[0].to != w[1].from || w[0].end != w[1].begin {
                return Err(Error::InvalidArgument("tube segments do not form a walk".into()));
            }
        }
        if segments[0].begin != TubeMark::Start || segments[segments.len() - 1].end != TubeMark::End {
            return Err(Error::InvalidArgument("tube walk must run from start to end".into()));
        }
        Ok(Self { segments, rollers, l_tot })
    }

    /// A closed walk `[passive, m_1, ..., m_k, passive]` where every interior
    /// vertex is a single-point roller, numbered in walk order.
    pub fn simple(walk: &[usize], l_tot: f64) -> Result<Self> {
        if walk.len() < 3 || walk[0] != walk[walk.len() - 1] {
            return Err(Error::InvalidArgument("walk must be closed and visit at least one roller".into()));
        }
        let k = walk.len() - 2;
        let mark = |pos: usize| match pos {
            0 => TubeMark::Start,
            p if p == walk.len() - 1 => TubeMark::End,
            p => TubeMark::Roller { roller: p - 1, offset: 0.0 },
        };
        let segments = (0..walk.len() - 1)
            .map(|s| TubeSegment { from: walk[s], to: walk[s + 1], begin: mark(s), end: mark(s + 1) })
            .collect();
        Self::new(segments, k, l_tot)
    }

    pub fn segments(&self) -> &[TubeSegment] {
        &self.segments
    }

    pub fn roller_count(&self) -> usize {
        self.rollers
    }

    pub fn l_tot(&self) -> f64 {
        self.l_tot
    }

    /// Incidence matrix: `+1` at the roller ending a segment, `-1` at the
    /// roller beginning it.
    pub fn b_matrix(&self) -> DMatrix<f64> {
        let mut b = DMatrix::zeros(self.segments.len(), self.rollers);
        for (k, s) in self.segments.iter().enumerate() {
            if let TubeMark::Roller { roller, .. } = s.end {
                b[(k, roller)] += 1.0;
            }
            if let TubeMark::Roller { roller, .. } = s.begin {
                b[(k, roller)] -= 1.0;
            }
        }
        b
    }

    /// The constant part `c` of `L = B r + c`.
    pub fn offset(&self) -> DVector<f64> {
        let pos = |m: TubeMark| match m {
            TubeMark::Start => 0.0,
            TubeMark::End => self.l_tot,
            TubeMark::Roller { offset, .. } => offset,
        };
        DVector::from_iterator(self.segments.len(), self.segments.iter().map(|s| pos(s.end) - pos(s.begin)))
    }

    /// Graph edge index of every segment.
    pub fn edge_indices(&self, g: &FrameworkGraph) -> Result<Vec<usize>> {
        self.segments
            .iter()
            .map(|s| {
                g.edge_index(s.from, s.to)
                    .ok_or_else(|| Error::InvalidGraph(format!("tube segment {}-{} is not an edge", s.from, s.to)))
            })
            .collect()
    }
}

/// Segment lengths from roller positions.
pub fn lengths_from_rollers(layout: &TubeLayout, r: &[f64]) -> Result<DVector<f64>> {
    if r.len() != layout.roller_count() {
        return Err(Error::DimensionMismatch { what: "roller positions", expected: layout.roller_count(), actual: r.len() });
    }
    if r.iter().any(|&v| !(0.0..=layout.l_tot()).contains(&v)) {
        return Err(Error::KinematicViolation("roller position outside the tube".into()));
    }
    let l = layout.b_matrix() * DVector::from_column_slice(r) + layout.offset();
    if let Some(k) = l.iter().position(|&v| v < 0.0) {
        return Err(Error::KinematicViolation(format!("rollers out of order on segment {k}")));
    }
    Ok(l)
}

/// Tube-segment rates `R_seg(x) xdot`.
fn segment_rates(layout: &TubeLayout, g: &FrameworkGraph, x: &Configuration, xdot: &DVector<f64>) -> Result<DVector<f64>> {
    if xdot.len() != g.state_dim() {
        return Err(Error::DimensionMismatch { what: "velocity", expected: g.state_dim(), actual: xdot.len() });
    }
    let rates = rigidity_matrix(g, x)? * xdot;
    let idx = layout.edge_indices(g)?;
    Ok(DVector::from_iterator(idx.len(), idx.iter().map(|&k| rates[k])))
}

/// Roller speeds that realize a plan's segment rates, `(B^T B)^{-1} B^T R xdot`.
///
/// For plans that keep the perimeter constant this reproduces the segment
/// rates exactly: `B rdot = R xdot`.
pub fn roller_rates(layout: &TubeLayout, g: &FrameworkGraph, x: &Configuration, xdot: &DVector<f64>) -> Result<DVector<f64>> {
    let ldot = segment_rates(layout, g, x, xdot)?;
    let b = layout.b_matrix();
    let gram = b.tr_mul(&b);
    let chol = gram
        .cholesky()
        .ok_or_else(|| Error::IllPosed("tube incidence matrix is rank deficient".into()))?;
    Ok(chol.solve(&b.tr_mul(&ldot)))
}

/// The row `sum_seg R_seg(x)` with right-hand side 0.
pub fn perimeter_constraint_row(layout: &TubeLayout, g: &FrameworkGraph, x: &Configuration) -> Result<LocalConstraint> {
    let r = rigidity_matrix(g, x)?;
    let mut row = DMatrix::zeros(1, g.state_dim());
    for k in layout.edge_indices(g)? {
        row += r.row(k);
    }
    LocalConstraint::new(row, DVector::zeros(1))
}

/// `1^T L_seg(x) - L_tot`.
pub fn perimeter_residual(layout: &TubeLayout, g: &FrameworkGraph, x: &Configuration) -> Result<f64> {
    let l = edge_lengths(g, x)?;
    Ok(layout.edge_indices(g)?.iter().map(|&k| l[k]).sum::<f64>() - layout.l_tot())
}

type Point<'a> = nalgebra::DVectorView<'a, f64>;

/// Cosine of the angle between `u` and `v` with its gradients in `u` and `v`.
fn cosine_with_grads(u: &DVector<f64>, v: &DVector<f64>) -> Option<(f64, DVector<f64>, DVector<f64>)> {
    let (nu, nv) = (u.norm(), v.norm());
    if nu == 0.0 || nv == 0.0 {
        return None;
    }
    let c = u.dot(v) / (nu * nv);
    let gu = v / (nu * nv) - u * (c / (nu * nu));
    let gv = u / (nu * nv) - v * (c / (nv * nv));
    Some((c, gu, gv))
}

struct Bisection {
    value: f64,
    /// Gradients with respect to `b, c, d, e`.
    grads: [DVector<f64>; 4],
}

fn bisection(pb: Point, pc: Point, pd: Point, pe: Point) -> Result<Bisection> {
    let (pb, pc, pd, pe) = (pb.into_owned(), pc.into_owned(), pd.into_owned(), pe.into_owned());
    let (c1, gu1, gv1) = cosine_with_grads(&(&pd - &pb), &(&pc - &pb)).ok_or(Error::UndefinedAngle)?;
    let (c2, gu2, gv2) = cosine_with_grads(&(&pe - &pc), &(&pb - &pc)).ok_or(Error::UndefinedAngle)?;
    let gb = -(&gu1 + &gv1) - &gv2;
    let gc = &gv1 + &gu2 + &gv2;
    Ok(Bisection { value: c1 - c2, grads: [gb, gc, gu1, -gu2] })
}

/// Difference of the two tube-angle cosines at a module's pinch points `b, c`;
/// `d` and `e` are the far ends of the tube segments entering `b` and leaving
/// `c`. Zero when the module sits on the bisector of its incoming edges.
pub fn bisection_residual(pb: &[f64], pc: &[f64], pd: &[f64], pe: &[f64]) -> Result<f64> {
    let v = |p: &[f64]| DVector::from_column_slice(p);
    let (b, c, d, e) = (v(pb), v(pc), v(pd), v(pe));
    Ok(bisection(b.column(0), c.column(0), d.column(0), e.column(0))?.value)
}

/// A roller module represented by its top point `a` and pinch points `b, c`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RollerModule {
    pub a: usize,
    pub b: usize,
    pub c: usize,
    /// Tube neighbour before `b`.
    pub d: usize,
    /// Tube neighbour after `c`.
    pub e: usize,
    pub l_ab: f64,
    pub l_bc: f64,
}

/// Residuals `[|AB| - L_AB, |AC| - L_AB, |BC| - L_BC, bisection]` and their
/// gradients over the full stacked state.
fn module_q(m: &RollerModule, x: &DVector<f64>, dim: usize) -> Result<(Vec<f64>, Vec<DVector<f64>>)> {
    let n = x.len();
    let p = |i: usize| x.rows(i * dim, dim);
    let mut res = Vec::with_capacity(4);
    let mut grads = Vec::with_capacity(4);
    for (i, j, target) in [(m.a, m.b, m.l_ab), (m.a, m.c, m.l_ab), (m.b, m.c, m.l_bc)] {
        let diff = p(i) - p(j);
        let len = diff.norm();
        if len == 0.0 {
            return Err(Error::SingularEdge { edge: i });
        }
        let u = diff / len;
        let mut g = DVector::zeros(n);
        g.rows_mut(i * dim, dim).copy_from(&u);
        g.rows_mut(j * dim, dim).copy_from(&-u);
        res.push(len - target);
        grads.push(g);
    }
    let bis = bisection(p(m.b), p(m.c), p(m.d), p(m.e))?;
    let mut g = DVector::zeros(n);
    for (k, &v) in [m.b, m.c, m.d, m.e].iter().enumerate() {
        let mut block = g.rows_mut(v * dim, dim);
        block += &bis.grads[k];
    }
    res.push(bis.value);
    grads.push(g);
    Ok((res, grads))
}

/// An isoperimetric robot over its expanded point set.
///
/// Each consensus agent owns a group of points: a passive node owns one, a
/// roller module owns its three.
#[derive(Debug, Clone)]
pub struct IsoperimetricRobot {
    graph: FrameworkGraph,
    layout: TubeLayout,
    modules: Vec<RollerModule>,
    agents: Vec<Vec<usize>>,
    agent_module: Vec<Option<usize>>,
    owner: Vec<usize>,
    agent_neighbors: Vec<Vec<usize>>,
}

/// Dimensions of the three-point roller triangle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RollerTriangleSpec {
    pub l_tot: f64,
    /// Tube distance from the start to each module's first pinch point.
    pub r: [f64; 2],
    pub l_ab: f64,
    pub l_bc: f64,
}

impl IsoperimetricRobot {
    pub fn new(
        graph: FrameworkGraph,
        layout: TubeLayout,
        modules: Vec<RollerModule>,
        agents: Vec<Vec<usize>>,
        agent_module: Vec<Option<usize>>,
    ) -> Result<Self> {
        layout.edge_indices(&graph)?;
        if agent_module.len() != agents.len() {
            return Err(Error::DimensionMismatch { what: "agent modules", expected: agents.len(), actual: agent_module.len() });
        }
        let mut owner = vec![usize::MAX; graph.n()];
        for (a, pts) in agents.iter().enumerate() {
            for &p in pts {
                if p >= graph.n() {
                    return Err(Error::UnknownVertex(p));
                }
                if owner[p] != usize::MAX {
                    return Err(Error::InvalidGraph(format!("point {p} owned by two agents")));
                }
                owner[p] = a;
            }
        }
        if let Some(p) = owner.iter().position(|&o| o == usize::MAX) {
            return Err(Error::InvalidGraph(format!("point {p} has no owning agent")));
        }
        for (a, m) in agent_module.iter().enumerate() {
            if let Some(m) = m {
                let module = modules.get(*m).ok_or(Error::InvalidArgument(format!("agent {a} names module {m}")))?;
                if [module.a, module.b, module.c].iter().any(|p| owner.get(*p) != Some(&a)) {
                    return Err(Error::InvalidGraph(format!("agent {a} does not own its module's points")));
                }
            }
        }
        let mut agent_neighbors = vec![Vec::new(); agents.len()];
        for &[i, j] in graph.edges() {
            let (a, b) = (owner[i], owner[j]);
            if a != b && !agent_neighbors[a].contains(&b) {
                agent_neighbors[a].push(b);
                agent_neighbors[b].push(a);
            }
        }
        agent_neighbors.iter_mut().for_each(|v| v.sort_unstable());
        if !crate::framework::is_connected(&agent_neighbors) {
            return Err(Error::Disconnected);
        }
        Ok(Self { graph, layout, modules, agents, agent_module, owner, agent_neighbors })
    }

    /// Three single-point nodes on a tube walk `0 -> 1 -> 2 -> 0`, laid out
    /// from roller positions `r` with node 0 at the origin and node 1 on the
    /// positive x axis.
    pub fn simple_triangle(l_tot: f64, r: [f64; 2]) -> Result<(Self, Configuration)> {
        let graph = FrameworkGraph::new(3, 2, vec![[0, 1], [1, 2], [2, 0]])?;
        let layout = TubeLayout::simple(&[0, 1, 2, 0], l_tot)?;
        let l = lengths_from_rollers(&layout, &r)?;
        let (a, b, c) = (l[0], l[1], l[2]);
        if a + b <= c || b + c <= a || a + c <= b {
            return Err(Error::KinematicViolation("segment lengths violate the triangle inequality".into()));
        }
        let cos0 = (a * a + c * c - b * b) / (2.0 * a * c);
        let p2 = vec![c * cos0, c * (1.0 - cos0 * cos0).sqrt()];
        let x = Configuration::from_points(2, &[vec![0.0, 0.0], vec![a, 0.0], p2])?;
        let robot = Self::new(graph, layout, vec![], vec![vec![0], vec![1], vec![2]], vec![None; 3])?;
        Ok((robot, x))
    }

    /// The planar triangle with one passive node and two three-point roller
    /// modules, laid out so that every module satisfies the bisection
    /// condition.
    ///
    /// Points: 0 passive, then `A, B, C` of the first module (1, 2, 3) and of
    /// the second (4, 5, 6). The tube runs `0 -> B2 -> C2 -> B3 -> C3 -> 0`
    /// counterclockwise and each top point sits outside the triangle.
    pub fn roller_triangle(spec: RollerTriangleSpec) -> Result<(Self, Configuration)> {
        let RollerTriangleSpec { l_tot, r, l_ab, l_bc } = spec;
        if !(l_bc > 0.0 && l_ab > l_bc / 2.0) {
            return Err(Error::InvalidArgument("module needs L_BC > 0 and L_AB > L_BC / 2".into()));
        }
        let mark = |roller: usize, offset: f64| TubeMark::Roller { roller, offset };
        let segments = vec![
            TubeSegment { from: 0, to: 2, begin: TubeMark::Start, end: mark(0, 0.0) },
            TubeSegment { from: 2, to: 3, begin: mark(0, 0.0), end: mark(0, l_bc) },
            TubeSegment { from: 3, to: 5, begin: mark(0, l_bc), end: mark(1, 0.0) },
            TubeSegment { from: 5, to: 6, begin: mark(1, 0.0), end: mark(1, l_bc) },
            TubeSegment { from: 6, to: 0, begin: mark(1, l_bc), end: TubeMark::End },
        ];
        let layout = TubeLayout::new(segments, 2, l_tot)?;
        let s = lengths_from_rollers(&layout, &r)?;
        let graph = FrameworkGraph::new(
            7,
            2,
            vec![[0, 2], [2, 3], [3, 5], [5, 6], [6, 0], [1, 2], [1, 3], [4, 5], [4, 6]],
        )?;
        let modules = vec![
            RollerModule { a: 1, b: 2, c: 3, d: 0, e: 5, l_ab, l_bc },
            RollerModule { a: 4, b: 5, c: 6, d: 3, e: 0, l_ab, l_bc },
        ];

        // equal turns at both pinch points of a module; solve closure for the two turns
        let dphi = [[0.0, 0.0], [1.0, 0.0], [2.0, 0.0], [2.0, 1.0], [2.0, 2.0]];
        let phis = |t: &[f64; 2]| dphi.map(|w| w[0] * t[0] + w[1] * t[1]);
        let mut t = [std::f64::consts::FRAC_PI_3; 2];
        let mut converged = false;
        for _ in 0..100 {
            let phi = phis(&t);
            let mut f = [0.0; 2];
            let mut jac = [[0.0; 2]; 2];
            for k in 0..5 {
                f[0] += s[k] * phi[k].cos();
                f[1] += s[k] * phi[k].sin();
                for a in 0..2 {
                    jac[0][a] -= s[k] * phi[k].sin() * dphi[k][a];
                    jac[1][a] += s[k] * phi[k].cos() * dphi[k][a];
                }
            }
            if f[0].abs().max(f[1].abs()) < 1e-14 * l_tot {
                converged = true;
                break;
            }
            let det = jac[0][0] * jac[1][1] - jac[0][1] * jac[1][0];
            if det.abs() < 1e-300 {
                break;
            }
            t[0] -= (jac[1][1] * f[0] - jac[0][1] * f[1]) / det;
            t[1] -= (jac[0][0] * f[1] - jac[1][0] * f[0]) / det;
        }
        if !converged || t.iter().any(|&v| !(v > 0.0 && v < std::f64::consts::PI)) {
            return Err(Error::KinematicViolation("roller positions admit no convex layout".into()));
        }

        let phi = phis(&t);
        let mut pts = vec![vec![0.0; 2]; 7];
        let walk = [0usize, 2, 3, 5, 6];
        let mut cur = [0.0, 0.0];
        for k in 0..4 {
            cur = [cur[0] + s[k] * phi[k].cos(), cur[1] + s[k] * phi[k].sin()];
            pts[walk[k + 1]] = cur.to_vec();
        }
        let h = (l_ab * l_ab - 0.25 * l_bc * l_bc).sqrt();
        for m in &modules {
            let (b, c) = (&pts[m.b], &pts[m.c]);
            let u = [(c[0] - b[0]) / l_bc, (c[1] - b[1]) / l_bc];
            // right of travel is outside a counterclockwise walk
            pts[m.a] = vec![0.5 * (b[0] + c[0]) + h * u[1], 0.5 * (b[1] + c[1]) - h * u[0]];
        }
        let x = Configuration::from_points(2, &pts)?;
        let robot = Self::new(
            graph,
            layout,
            modules,
            vec![vec![0], vec![1, 2, 3], vec![4, 5, 6]],
            vec![None, Some(0), Some(1)],
        )?;
        Ok((robot, x))
    }

    pub fn graph(&self) -> &FrameworkGraph {
        &self.graph
    }

    pub fn layout(&self) -> &TubeLayout {
        &self.layout
    }

    pub fn modules(&self) -> &[RollerModule] {
        &self.modules
    }

    pub fn agents(&self) -> &[Vec<usize>] {
        &self.agents
    }

    pub fn agent_count(&self) -> usize {
        self.agents.len()
    }

    pub fn agent_neighbors(&self) -> &[Vec<usize>] {
        &self.agent_neighbors
    }

    pub fn agent_of_point(&self, p: usize) -> Option<usize> {
        self.owner.get(p).copied()
    }

    /// The point standing for an agent in graph-level views: the top point of
    /// a module, or the single point of a passive node.
    pub fn representative_point(&self, agent: usize) -> usize {
        match self.agent_module[agent] {
            Some(m) => self.modules[m].a,
            None => self.agents[agent][0],
        }
    }

    /// Stacked Q residuals, four per module.
    pub fn q_residuals(&self, x: &Configuration) -> Result<DVector<f64>> {
        let mut out = Vec::with_capacity(4 * self.modules.len());
        for m in &self.modules {
            out.extend(module_q(m, x.coords(), self.graph.dim())?.0);
        }
        Ok(DVector::from_vec(out))
    }

    /// Gradients of every Q residual, one row each.
    pub fn constraint_jacobian_q(&self, x: &Configuration) -> Result<DMatrix<f64>> {
        x.check_conforms(&self.graph)?;
        let mut rows = Vec::with_capacity(4 * self.modules.len());
        for m in &self.modules {
            rows.extend(module_q(m, x.coords(), self.graph.dim())?.1.into_iter().map(|g| g.transpose()));
        }
        if rows.is_empty() {
            return Ok(DMatrix::zeros(0, self.graph.state_dim()));
        }
        Ok(DMatrix::from_rows(&rows))
    }

    pub fn perimeter_residual(&self, x: &Configuration) -> Result<f64> {
        perimeter_residual(&self.layout, &self.graph, x)
    }

    /// Encoder readings implied by a configuration: tube distance from the
    /// start to each roller.
    pub fn roller_positions(&self, x: &Configuration) -> Result<DVector<f64>> {
        let l = edge_lengths(&self.graph, x)?;
        let idx = self.layout.edge_indices(&self.graph)?;
        let mut r = vec![f64::NAN; self.layout.roller_count()];
        let mut along = 0.0;
        for (s, &k) in self.layout.segments().iter().zip(&idx) {
            along += l[k];
            if let TubeMark::Roller { roller, offset } = s.end {
                if r[roller].is_nan() {
                    r[roller] = along - offset;
                }
            }
        }
        Ok(DVector::from_vec(r))
    }

    /// One Gauss-Newton step onto the Q and perimeter constraints when any
    /// residual exceeds [`PROJECTION_THRESHOLD`]. `hold` rows are kept at
    /// their current values.
    pub fn project(&self, x: &Configuration, hold: &LocalConstraint) -> Result<Configuration> {
        let q = self.q_residuals(x)?;
        let per = self.perimeter_residual(x)?;
        if q.amax().max(per.abs()) <= PROJECTION_THRESHOLD {
            return Ok(x.clone());
        }
        let jq = self.constraint_jacobian_q(x)?;
        let jp = perimeter_constraint_row(&self.layout, &self.graph, x)?.a;
        let n = self.graph.state_dim();
        let rows = jq.nrows() + 1 + hold.rows();
        let mut j = DMatrix::zeros(rows, n);
        j.view_mut((0, 0), (jq.nrows(), n)).copy_from(&jq);
        j.view_mut((jq.nrows(), 0), (1, n)).copy_from(&jp);
        j.view_mut((jq.nrows() + 1, 0), (hold.rows(), n)).copy_from(&hold.a);
        let mut res = DVector::zeros(rows);
        res.rows_mut(0, q.len()).copy_from(&q);
        res[q.len()] = per;
        let step = lstsq(&j, &(-res), 1e-10);
        Configuration::new(x.dim(), x.coords() + step)
    }
}

/// Estimation cost held by one agent: its share of the measured segment
/// residuals, its share of the perimeter residual and its own module's Q
/// residuals.
#[derive(Debug, Clone)]
struct IsoAgentCost {
    lengths: LengthResidualCost,
    tube: Vec<(usize, usize)>,
    l_tot: f64,
    perimeter_weight: f64,
    module: Option<RollerModule>,
    q_weight: f64,
}

impl SmoothCost for IsoAgentCost {
    fn dim(&self) -> usize {
        self.lengths.state_dim
    }

    fn value(&self, x: &DVector<f64>) -> f64 {
        self.value_and_gradient(x).0
    }

    fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        self.value_and_gradient(x).1
    }

    fn value_and_gradient(&self, x: &DVector<f64>) -> (f64, DVector<f64>) {
        let d = self.lengths.point_dim;
        let (mut v, mut g) = self.lengths.value_and_gradient(x);
        if self.perimeter_weight > 0.0 {
            let mut total = 0.0;
            let mut dtotal = DVector::zeros(x.len());
            for &(a, b) in &self.tube {
                let diff = x.rows(a * d, d) - x.rows(b * d, d);
                let len = diff.norm();
                total += len;
                if len > 0.0 {
                    let u = diff / len;
                    let mut ga = dtotal.rows_mut(a * d, d);
                    ga += &u;
                    let mut gb = dtotal.rows_mut(b * d, d);
                    gb -= &u;
                }
            }
            let res = total - self.l_tot;
            v += self.perimeter_weight * res * res;
            g += dtotal * (2.0 * self.perimeter_weight * res);
        }
        if let Some(m) = &self.module {
            // degenerate geometry has no defined residual; contribute nothing there
            if let Ok((res, grads)) = module_q(m, x, d) {
                for (r, gr) in res.iter().zip(grads) {
                    v += self.q_weight * r * r;
                    g += gr * (2.0 * self.q_weight * r);
                }
            }
        }
        (v, g)
    }
}

/// Shape reconstruction from encoder readings.
///
/// Encoders give every segment length through the tube layout. Each agent
/// holds half of every measured segment it touches, a `1/n` share of the
/// perimeter residual and its own module's Q residuals weighted by
/// `q_weight`. Anchor rows are held by the agents owning the pinned points.
pub fn build_isoperimetric_estimation_problem(
    robot: &IsoperimetricRobot,
    encoder_r: &[f64],
    anchors: &AnchorSpec,
    q_weight: f64,
    hyper: Hyperparams,
) -> Result<ConsensusProblem> {
    let g = robot.graph();
    let d = g.dim();
    let nd = g.state_dim();
    let measured = lengths_from_rollers(robot.layout(), encoder_r)?;
    let tube: Vec<(usize, usize)> = robot.layout().segments().iter().map(|s| (s.from, s.to)).collect();

    let per_point = anchors.lower(g)?;
    let mut agent_constraints = vec![LocalConstraint::empty(nd); robot.agent_count()];
    for (p, c) in per_point.iter().enumerate() {
        let a = robot.owner[p];
        agent_constraints[a] = agent_constraints[a].stack(c);
    }
    let required = d * (d + 1) / 2;
    let stacked = agent_constraints.iter().fold(LocalConstraint::empty(nd), |acc, c| acc.stack(c));
    let found = numeric_rank(&stacked.a, 1e-10);
    if found < required {
        return Err(Error::UnderAnchored { found, required });
    }

    let n_agents = robot.agent_count() as f64;
    let mut nodes = Vec::with_capacity(robot.agent_count());
    for (a, constraint) in agent_constraints.into_iter().enumerate() {
        let mut terms = Vec::new();
        for (s, &(from, to)) in tube.iter().enumerate() {
            let share = 0.5 * ((robot.owner[from] == a) as u8 + (robot.owner[to] == a) as u8) as f64;
            if share > 0.0 {
                terms.push(LengthTerm { a: from, b: to, target: measured[s], weight: share });
            }
        }
        let cost = IsoAgentCost {
            lengths: LengthResidualCost { point_dim: d, state_dim: nd, terms },
            tube: tube.clone(),
            l_tot: robot.layout().l_tot(),
            perimeter_weight: 1.0 / n_agents,
            module: robot.agent_module[a].map(|m| robot.modules[m]),
            q_weight,
        };
        nodes.push(NodeSpec {
            cost: LocalCost::General(Arc::new(cost)),
            constraint,
            neighbors: robot.agent_neighbors[a].clone(),
        });
    }
    ConsensusProblem::new(nd, nodes, hyper)
}

/// Largest Q residual tolerated in a configuration handed to the controller.
pub const CONTROL_FEASIBILITY_TOL: f64 = 1e-3;

/// Velocity coordination over the expanded state.
///
/// Agent `a` holds `assignments[a]`, the linearized Q rows of its own module
/// and, if listed in `perimeter_holders`, the perimeter row.
pub fn build_isoperimetric_control_problem(
    robot: &IsoperimetricRobot,
    x_hat: &Configuration,
    objective: &ControlObjective,
    assignments: &[Vec<VelocityConstraint>],
    perimeter_holders: &[usize],
    hyper: Hyperparams,
) -> Result<ConsensusProblem> {
    let g = robot.graph();
    let nd = g.state_dim();
    let n_agents = robot.agent_count();
    if assignments.len() != n_agents {
        return Err(Error::DimensionMismatch { what: "constraint assignments", expected: n_agents, actual: assignments.len() });
    }
    if let Some(&h) = perimeter_holders.iter().find(|&&h| h >= n_agents) {
        return Err(Error::InvalidArgument(format!("perimeter holder {h} is not an agent")));
    }
    let q = robot.q_residuals(x_hat)?;
    if q.amax() > CONTROL_FEASIBILITY_TOL {
        return Err(Error::KinematicViolation(format!("module constraints violated by {:.3e}", q.amax())));
    }
    let point_costs = objective_costs(g, x_hat, objective)?;
    let perimeter = perimeter_constraint_row(robot.layout(), g, x_hat)?;

    let mut nodes = Vec::with_capacity(n_agents);
    for a in 0..n_agents {
        let own: Vec<&QuadraticCost> = robot.agents[a].iter().map(|&p| &point_costs[p]).collect();
        let rows: usize = own.iter().map(|c| c.d.nrows()).sum();
        let mut dm = DMatrix::zeros(rows, nd);
        let mut f = DVector::zeros(rows);
        let mut at = 0;
        for c in own {
            dm.view_mut((at, 0), (c.d.nrows(), nd)).copy_from(&c.d);
            f.rows_mut(at, c.f.len()).copy_from(&c.f);
            at += c.d.nrows();
        }
        let mut constraint = lower_constraints(g, x_hat, &assignments[a])?;
        if let Some(m) = robot.agent_module[a] {
            let (_, grads) = module_q(&robot.modules[m], x_hat.coords(), g.dim())?;
            let jq = DMatrix::from_rows(&grads.iter().map(|v| v.transpose()).collect::<Vec<_>>());
            constraint = constraint.stack(&LocalConstraint::new(jq, DVector::zeros(grads.len()))?);
        }
        if perimeter_holders.contains(&a) {
            constraint = constraint.stack(&perimeter);
        }
        nodes.push(NodeSpec {
            cost: LocalCost::Quadratic(QuadraticCost { d: dm, f }),
            constraint,
            neighbors: robot.agent_neighbors[a].clone(),
        });
    }
    let problem = ConsensusProblem::new(nd, nodes, hyper)?;
    let stacked = problem.stacked_constraints();
    reduce_rows(&stacked.a, &stacked.b, 1e-10)?;
    Ok(problem)
}
