//! Randomly perturbed robots.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use truss_core::framework::{edge_lengths, rigidity_matrix};
use truss_core::{Configuration, FrameworkGraph};

use crate::error::{invalid, Result};

/// Gauss-Newton iterations used to realize perturbed lengths.
pub const REALIZATION_STEPS: usize = 50;

/// Damping of the realization steps, relative to the largest diagonal entry.
const DAMPING: f64 = 1e-8;

/// Shortest edge a perturbed target may ask for, relative to nominal.
const MIN_LENGTH_FRACTION: f64 = 0.2;

/// Draws target lengths `l_k + N(0, std)` and moves `nominal` toward them.
///
/// The realization runs [`REALIZATION_STEPS`] damped Gauss-Newton steps on
/// the length residuals with the `hold` vertices fixed. Targets that no
/// configuration realizes are matched in the least-squares sense.
pub fn perturbed_lengths(
    g: &FrameworkGraph,
    nominal: &Configuration,
    std: f64,
    seed: u64,
    hold: &[usize],
) -> Result<Configuration> {
    let normal = Normal::new(0.0, std).map_err(|e| invalid(format!("perturbation std: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let l0 = edge_lengths(g, nominal)?;
    let target = DVector::from_iterator(
        l0.len(),
        l0.iter().map(|&l| (l + normal.sample(&mut rng)).max(MIN_LENGTH_FRACTION * l)),
    );
    realize_lengths(g, nominal, &target, hold)
}

/// Damped Gauss-Newton on `L(x) - target` from `start`, `hold` vertices fixed.
pub fn realize_lengths(
    g: &FrameworkGraph,
    start: &Configuration,
    target: &DVector<f64>,
    hold: &[usize],
) -> Result<Configuration> {
    let d = g.dim();
    let free: Vec<usize> = (0..g.state_dim()).filter(|c| !hold.contains(&(c / d))).collect();
    let mut x = start.clone();
    for _ in 0..REALIZATION_STEPS {
        let res = &*edge_lengths(g, &x)? - target;
        let r = rigidity_matrix(g, &x)?;
        let j = DMatrix::from_fn(r.nrows(), free.len(), |row, k| r[(row, free[k])]);
        let mut h = j.tr_mul(&j);
        let mu = DAMPING * h.diagonal().amax().max(1.0);
        for k in 0..free.len() {
            h[(k, k)] += mu;
        }
        let Some(chol) = h.cholesky() else { break };
        let step = chol.solve(&(-j.tr_mul(&res)));
        let mut coords = x.coords().clone();
        for (k, &c) in free.iter().enumerate() {
            coords[c] += step[k];
        }
        x = Configuration::new(d, coords)?;
    }
    Ok(x)
}
