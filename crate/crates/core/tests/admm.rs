use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use std::sync::Arc;

use truss_core::admm::{
    centralized_solve, dual_update_p, dual_update_r, primal_update_general, primal_update_quadratic, run_rounds,
    run_rounds_with, ConsensusProblem, ExecutionMode, Hyperparams, InnerSolverConfig, LocalConstraint, LocalCost,
    NodeAdmmState, NodeSpec, QuadraticCost, QuadraticFactor, RunOptions, SmoothCost,
};
use truss_core::Error;

fn randn(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.sample(StandardNormal))
}

fn randv(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.sample(StandardNormal))
}

/// A random quadratic consensus problem on an explicit neighbour structure.
fn random_problem(rng: &mut ChaCha8Rng, dim: usize, adj: &[Vec<usize>], hyper: Hyperparams) -> ConsensusProblem {
    let nodes = adj
        .iter()
        .enumerate()
        .map(|(i, nb)| {
            let rows = 2 + (i % 3);
            let cost = QuadraticCost::new(randn(rng, rows, dim), randv(rng, rows)).unwrap();
            let constraint = if i % 2 == 0 {
                LocalConstraint::new(randn(rng, 1, dim), randv(rng, 1)).unwrap()
            } else {
                LocalConstraint::empty(dim)
            };
            NodeSpec { cost: LocalCost::Quadratic(cost), constraint, neighbors: nb.clone() }
        })
        .collect();
    ConsensusProblem::new(dim, nodes, hyper).unwrap()
}

fn path3() -> Vec<Vec<usize>> {
    vec![vec![1], vec![0, 2], vec![1]]
}

/// Explicit augmented-Lagrangian iteration that keeps `lambda_ij`, `nu_ij`
/// and the auxiliary `g_ij` for every ordered neighbour pair, with the
/// closed-form `g` minimizer in its general form.
struct ExplicitAdmm {
    x: Vec<DVector<f64>>,
    r: Vec<DVector<f64>>,
    lambda: Vec<Vec<DVector<f64>>>,
    nu: Vec<Vec<DVector<f64>>>,
    g: Vec<Vec<DVector<f64>>>,
}

impl ExplicitAdmm {
    fn new(problem: &ConsensusProblem, x0: &DVector<f64>) -> Self {
        let n = problem.node_count();
        let dim = problem.dim();
        let per_pair = |v: DVector<f64>| -> Vec<Vec<DVector<f64>>> {
            problem.nodes().iter().map(|nd| vec![v.clone(); nd.neighbors.len()]).collect()
        };
        Self {
            x: vec![x0.clone(); n],
            r: problem.nodes().iter().map(|nd| DVector::zeros(nd.constraint.rows())).collect(),
            lambda: per_pair(DVector::zeros(dim)),
            nu: per_pair(DVector::zeros(dim)),
            g: per_pair(x0.clone()),
        }
    }

    fn slot(problem: &ConsensusProblem, i: usize, j: usize) -> usize {
        problem.nodes()[i].neighbors.iter().position(|&k| k == j).unwrap()
    }

    fn round(&mut self, problem: &ConsensusProblem) {
        let c = problem.hyper.alpha_p;
        let ar = problem.hyper.alpha_r;
        let nodes = problem.nodes();
        let dim = problem.dim();
        // multipliers use x^k and g^k
        for i in 0..nodes.len() {
            for (s, &j) in nodes[i].neighbors.iter().enumerate() {
                self.lambda[i][s] += c * (&self.x[i] - &self.g[i][s]);
                self.nu[i][s] += c * (&self.x[j] - &self.g[i][s]);
            }
            if nodes[i].constraint.rows() > 0 {
                let a = &nodes[i].constraint;
                self.r[i] += ar * (&a.a * &self.x[i] - &a.b);
            }
        }
        // x update: stationarity of the augmented Lagrangian in x_i
        let mut next = Vec::with_capacity(nodes.len());
        for i in 0..nodes.len() {
            let LocalCost::Quadratic(q) = &nodes[i].cost else { unreachable!() };
            let a = &nodes[i].constraint;
            let mut h = 2.0 * q.d.transpose() * &q.d;
            let mut rhs = -2.0 * q.d.transpose() * &q.f;
            if a.rows() > 0 {
                h += 2.0 * ar * a.a.transpose() * &a.a;
                rhs += 2.0 * ar * a.a.transpose() * &a.b - a.a.transpose() * &self.r[i];
            }
            for (s, &j) in nodes[i].neighbors.iter().enumerate() {
                let back = Self::slot(problem, j, i);
                rhs -= &self.lambda[i][s] + &self.nu[j][back];
                rhs += c * (&self.g[i][s] + &self.g[j][back]);
                h += 2.0 * c * DMatrix::<f64>::identity(dim, dim);
            }
            next.push(h.lu().solve(&rhs).unwrap());
        }
        self.x = next;
        // g update from x^{k+1}
        for i in 0..nodes.len() {
            for (s, &j) in nodes[i].neighbors.iter().enumerate() {
                self.g[i][s] = 0.5 * (&self.x[i] + &self.x[j]) + (&self.lambda[i][s] + &self.nu[i][s]) / (2.0 * c);
            }
        }
    }
}

#[test]
fn eliminated_recurrence_matches_explicit_multipliers() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let hyper = Hyperparams { alpha_p: 0.7, alpha_r: 1.3, iterations: 1 };
    let problem = random_problem(&mut rng, 4, &path3(), hyper);
    let x0 = randv(&mut rng, 4);
    let mut explicit = ExplicitAdmm::new(&problem, &x0);
    let mut states = problem.initial_states(&x0);
    for _ in 0..50 {
        explicit.round(&problem);
        states = run_rounds(&problem, states).unwrap().states;
        for (s, xe) in states.iter().zip(&explicit.x) {
            let scale = 1.0 + xe.amax();
            assert!((&s.x - xe).amax() <= 1e-12 * scale, "{} vs {}", s.x, xe);
        }
    }
}

/// Stationarity of the local subproblem written out directly from its
/// definition.
fn subproblem_gradient(
    q: &QuadraticCost,
    a: &LocalConstraint,
    p: &DVector<f64>,
    r: &DVector<f64>,
    mids: &[DVector<f64>],
    hyper: &Hyperparams,
    x: &DVector<f64>,
) -> DVector<f64> {
    let mut g = 2.0 * q.d.transpose() * (&q.d * x + &q.f) + p;
    if a.rows() > 0 {
        let res = &a.a * x - &a.b;
        g += a.a.transpose() * (r + 2.0 * hyper.alpha_r * res);
    }
    for m in mids {
        g += 2.0 * hyper.alpha_p * (x - m);
    }
    g
}

/// Conjugate gradients driven only by gradient evaluations; Hessian-vector
/// products come from gradient differences, exact for a quadratic.
fn numeric_argmin(grad: impl Fn(&DVector<f64>) -> DVector<f64>, x0: DVector<f64>) -> DVector<f64> {
    let mut x = x0;
    let g0 = grad(&x);
    let mut r = -g0.clone();
    let mut d = r.clone();
    for _ in 0..10 * x.len() {
        if r.norm() < 1e-15 * (1.0 + g0.norm()) {
            break;
        }
        let hd = grad(&(&x + &d)) - grad(&x);
        let step = r.norm_squared() / d.dot(&hd);
        x += step * &d;
        // recompute the residual to avoid drift
        let r_new = -grad(&x);
        let beta = r_new.norm_squared() / r.norm_squared();
        d = &r_new + beta * d;
        r = r_new;
    }
    x
}

#[test]
fn quadratic_update_equals_numeric_argmin() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for trial in 0..50 {
        let dim = 3 + trial % 5;
        let rows = 1 + trial % 4;
        let q = QuadraticCost::new(randn(&mut rng, rows, dim), randv(&mut rng, rows)).unwrap();
        let a = if trial % 3 == 0 {
            LocalConstraint::empty(dim)
        } else {
            LocalConstraint::new(randn(&mut rng, 1 + trial % 2, dim), randv(&mut rng, 1 + trial % 2)).unwrap()
        };
        let deg = 1 + trial % 3;
        let hyper = Hyperparams { alpha_p: rng.random_range(0.2..3.0), alpha_r: rng.random_range(0.2..3.0), iterations: 1 };
        let mut state = NodeAdmmState::new(randv(&mut rng, dim), a.rows());
        state.p = randv(&mut rng, dim);
        state.r = randv(&mut rng, a.rows());
        let neighbors: Vec<usize> = (1..=deg).collect();
        let inbox: Vec<DVector<f64>> = (0..=deg).map(|_| randv(&mut rng, dim)).collect();

        let factor = QuadraticFactor::new(&q, &a, deg, &hyper).unwrap();
        let x = primal_update_quadratic(&state, 0, &neighbors, &inbox, &a, &factor, hyper.alpha_p).unwrap();

        let mids: Vec<DVector<f64>> = neighbors.iter().map(|&j| 0.5 * (&state.x + &inbox[j])).collect();
        let oracle = numeric_argmin(|y| subproblem_gradient(&q, &a, &state.p, &state.r, &mids, &hyper, y), state.x.clone());
        assert!((&x - &oracle).amax() < 1e-8, "trial {trial}: {}", (&x - &oracle).amax());

        let g_at = subproblem_gradient(&q, &a, &state.p, &state.r, &mids, &hyper, &x).norm();
        let g_start = subproblem_gradient(&q, &a, &state.p, &state.r, &mids, &hyper, &state.x).norm();
        assert!(g_at <= 1e-10 * (1.0 + g_start), "trial {trial}: stationarity {g_at}");
    }
}

#[test]
fn general_update_agrees_with_quadratic_update() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let dim = 5;
    let q = QuadraticCost::new(randn(&mut rng, 3, dim), randv(&mut rng, 3)).unwrap();
    let a = LocalConstraint::new(randn(&mut rng, 2, dim), randv(&mut rng, 2)).unwrap();
    let hyper = Hyperparams::default();
    let mut state = NodeAdmmState::new(randv(&mut rng, dim), 2);
    state.p = randv(&mut rng, dim);
    state.r = randv(&mut rng, 2);
    let inbox = vec![DVector::zeros(dim), randv(&mut rng, dim), randv(&mut rng, dim)];
    let factor = QuadraticFactor::new(&q, &a, 2, &hyper).unwrap();
    let exact = primal_update_quadratic(&state, 0, &[1, 2], &inbox, &a, &factor, hyper.alpha_p).unwrap();
    let cfg = InnerSolverConfig { grad_tol: 1e-11, max_iters: 2000, ..Default::default() };
    let approx = primal_update_general(&state, 0, &[1, 2], &inbox, &q, &a, &hyper, &cfg).unwrap();
    assert!((exact - approx).amax() < 1e-8);
}

#[test]
fn dual_recurrences_match_straight_line_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let adj = vec![vec![1, 4], vec![0, 2], vec![1, 3], vec![2, 4], vec![3, 0]];
    let hyper = Hyperparams { alpha_p: 0.9, alpha_r: 1.7, iterations: 1 };
    let problem = random_problem(&mut rng, 3, &adj, hyper);
    let mut states = problem.initial_states(&randv(&mut rng, 3));
    // distinct starting copies so the p recurrence is exercised from round one
    for s in states.iter_mut() {
        s.x = randv(&mut rng, 3);
    }
    let mut p_oracle: Vec<DVector<f64>> = vec![DVector::zeros(3); 5];
    let mut r_oracle: Vec<DVector<f64>> = problem.nodes().iter().map(|n| DVector::zeros(n.constraint.rows())).collect();
    for _ in 0..3 {
        let xs: Vec<DVector<f64>> = states.iter().map(|s| s.x.clone()).collect();
        for i in 0..5 {
            for &j in &adj[i] {
                p_oracle[i] += 0.9 * (&xs[i] - &xs[j]);
            }
            let c = &problem.nodes()[i].constraint;
            if c.rows() > 0 {
                r_oracle[i] += 1.7 * (&c.a * &xs[i] - &c.b);
            }
            let p = dual_update_p(&states[i], i, &adj[i], &xs, 0.9).unwrap();
            let r = dual_update_r(&states[i], c, 1.7);
            let mut advanced = states[i].clone();
            advanced.p = p;
            advanced.r = r;
            assert!((&advanced.p - &p_oracle[i]).amax() < 1e-12);
            assert!((&advanced.r - &r_oracle[i]).amax() < 1e-12);
        }
        states = run_rounds(&problem, states).unwrap().states;
        for i in 0..5 {
            assert!((&states[i].p - &p_oracle[i]).amax() < 1e-12);
            assert!((&states[i].r - &r_oracle[i]).amax() < 1e-12);
        }
    }
}

fn averaging(iterations: usize) -> ConsensusProblem {
    let node = |c: f64, nb: usize| NodeSpec {
        cost: LocalCost::Quadratic(QuadraticCost::new(DMatrix::identity(1, 1), DVector::from_element(1, -c)).unwrap()),
        constraint: LocalConstraint::empty(1),
        neighbors: vec![nb],
    };
    ConsensusProblem::new(1, vec![node(0.0, 1), node(2.0, 0)], Hyperparams { iterations, ..Default::default() }).unwrap()
}

#[test]
fn two_node_averaging_reaches_the_mean() {
    let p = averaging(200);
    let oracle = centralized_solve(&p, None).unwrap();
    assert!((oracle[0] - 1.0).abs() < 1e-12);
    let out = run_rounds(&p, p.initial_states(&DVector::zeros(1))).unwrap();
    for s in &out.states {
        assert!((s.x[0] - 1.0).abs() < 1e-3);
    }
    assert_eq!(out.diagnostics.rounds(), 200);
    assert!(out.diagnostics.final_consensus_residual().unwrap() < 1e-3);
}

#[test]
fn zero_rounds_return_the_initial_states() {
    let p = averaging(0);
    let init = p.initial_states(&DVector::from_element(1, 3.5));
    let out = run_rounds(&p, init.clone()).unwrap();
    assert_eq!(out.states, init);
    assert_eq!(out.diagnostics.rounds(), 0);
}

#[test]
fn disconnected_graph_is_rejected_before_round_one() {
    let node = |nb: Vec<usize>| NodeSpec {
        cost: LocalCost::Quadratic(QuadraticCost::new(DMatrix::identity(1, 1), DVector::zeros(1)).unwrap()),
        constraint: LocalConstraint::empty(1),
        neighbors: nb,
    };
    let p = ConsensusProblem::new(1, vec![node(vec![1]), node(vec![0]), node(vec![])], Hyperparams::default()).unwrap();
    assert_eq!(run_rounds(&p, p.initial_states(&DVector::zeros(1))).unwrap_err(), Error::Disconnected);
}

#[test]
fn parallel_and_sequential_are_bit_identical() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let adj = vec![vec![1, 2], vec![0, 2, 3], vec![0, 1], vec![1]];
    let problem = random_problem(&mut rng, 5, &adj, Hyperparams { iterations: 60, ..Default::default() });
    let init = problem.initial_states(&DVector::zeros(5));
    let seq = run_rounds_with(&problem, init.clone(), RunOptions { mode: ExecutionMode::Sequential, record_transcript: false })
        .unwrap();
    let par = run_rounds_with(&problem, init, RunOptions { mode: ExecutionMode::Parallel, record_transcript: false }).unwrap();
    assert_eq!(seq.states, par.states);
    assert_eq!(seq.diagnostics, par.diagnostics);
}

#[test]
fn transcript_carries_only_state_estimates() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let adj = vec![vec![1, 2], vec![0, 2, 3], vec![0, 1], vec![1]];
    let problem = random_problem(&mut rng, 5, &adj, Hyperparams { iterations: 7, ..Default::default() });
    let init = problem.initial_states(&randv(&mut rng, 5));
    let out = run_rounds_with(&problem, init.clone(), RunOptions { record_transcript: true, ..Default::default() }).unwrap();
    let transcript = out.transcript.unwrap();
    assert_eq!(transcript.len(), 7 * 2 * problem.link_count());

    // replay: each round's payloads are exactly the previous round's x_i
    let mut states = init;
    for round in 0..7 {
        for m in transcript.iter().filter(|m| m.round == round) {
            assert!(adj[m.from].contains(&m.to));
            assert_eq!(m.payload.len(), problem.dim());
            assert_eq!(m.payload, states[m.from].x);
        }
        states = run_rounds(&problem.clone().with_hyper(Hyperparams { iterations: 1, ..problem.hyper }), states)
            .unwrap()
            .states;
    }
}

/// Gradient of a general cost against central differences.
#[derive(Debug)]
struct Rosen;

impl SmoothCost for Rosen {
    fn dim(&self) -> usize {
        2
    }
    fn value(&self, x: &DVector<f64>) -> f64 {
        (1.0 - x[0]).powi(2) + 10.0 * (x[1] - x[0] * x[0]).powi(2)
    }
    fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_vec(vec![
            -2.0 * (1.0 - x[0]) - 40.0 * x[0] * (x[1] - x[0] * x[0]),
            20.0 * (x[1] - x[0] * x[0]),
        ])
    }
}

#[test]
fn general_costs_reach_the_centralized_optimum() {
    // two nodes share a non-quadratic cost split in halves
    let half = |nb: usize| NodeSpec {
        cost: LocalCost::General(Arc::new(Rosen)),
        constraint: LocalConstraint::empty(2),
        neighbors: vec![nb],
    };
    let p = ConsensusProblem::new(2, vec![half(1), half(0)], Hyperparams { iterations: 300, ..Default::default() }).unwrap();
    let out = run_rounds(&p, p.initial_states(&DVector::zeros(2))).unwrap();
    for s in &out.states {
        assert!((&s.x - DVector::from_vec(vec![1.0, 1.0])).amax() < 1e-3, "{}", s.x);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn random_convex_instances_reach_the_centralized_optimum(seed in 0u64..10_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let adj = vec![vec![1, 3], vec![0, 2], vec![1, 3], vec![2, 0]];
        let problem = random_problem(&mut rng, 3, &adj, Hyperparams { iterations: 3000, ..Default::default() });
        let out = run_rounds(&problem, problem.initial_states(&DVector::zeros(3))).unwrap();
        let oracle = centralized_solve(&problem, None).unwrap();
        let err = out.states.iter().map(|s| (&s.x - &oracle).norm()).fold(0.0, f64::max);
        prop_assert!(err < 1e-3 * (1.0 + oracle.norm()), "error {err}");
        prop_assert!(out.diagnostics.final_consensus_residual().unwrap() < 1e-3);
        prop_assert!(out.diagnostics.final_max_violation().unwrap() < 1e-3);
    }

    #[test]
    fn quadratic_update_is_stationary(seed in 0u64..100_000, deg in 0usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dim = 4;
        let q = QuadraticCost::new(randn(&mut rng, 3, dim), randv(&mut rng, 3)).unwrap();
        let a = LocalConstraint::new(randn(&mut rng, 1, dim), randv(&mut rng, 1)).unwrap();
        let hyper = Hyperparams::default();
        let mut state = NodeAdmmState::new(randv(&mut rng, dim), 1);
        state.p = randv(&mut rng, dim);
        state.r = randv(&mut rng, 1);
        let neighbors: Vec<usize> = (1..=deg).collect();
        let inbox: Vec<DVector<f64>> = (0..=deg).map(|_| randv(&mut rng, dim)).collect();
        let factor = QuadraticFactor::new(&q, &a, deg, &hyper).unwrap();
        let x = primal_update_quadratic(&state, 0, &neighbors, &inbox, &a, &factor, 1.0).unwrap();
        let mids: Vec<DVector<f64>> = neighbors.iter().map(|&j| 0.5 * (&state.x + &inbox[j])).collect();
        let g_at = subproblem_gradient(&q, &a, &state.p, &state.r, &mids, &hyper, &x).norm();
        let g0 = subproblem_gradient(&q, &a, &state.p, &state.r, &mids, &hyper, &state.x).norm();
        prop_assert!(g_at <= 1e-10 * (1.0 + g0));
    }
}
