//! Small dense linear-algebra helpers shared by the solvers.

use nalgebra::{DMatrix, DVector};

use crate::{Error, Result};

/// Relative singular-value cutoff used for numeric rank decisions.
pub const DEFAULT_RANK_TOL: f64 = 1e-8;

/// Number of singular values above `rel_tol * sigma_max`.
pub fn numeric_rank(m: &DMatrix<f64>, rel_tol: f64) -> usize {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0;
    }
    let sv = m.clone().svd(false, false).singular_values;
    let max = sv.iter().cloned().fold(0.0_f64, f64::max);
    if max == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > rel_tol * max).count()
}

/// Stack matrices vertically. All inputs must share a column count.
pub fn vstack(blocks: &[&DMatrix<f64>], ncols: usize) -> DMatrix<f64> {
    let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
    let mut out = DMatrix::zeros(rows, ncols);
    let mut r0 = 0;
    for b in blocks {
        debug_assert_eq!(b.ncols(), ncols);
        out.view_mut((r0, 0), (b.nrows(), ncols)).copy_from(*b);
        r0 += b.nrows();
    }
    out
}

pub fn vstack_vec(parts: &[&DVector<f64>]) -> DVector<f64> {
    let n: usize = parts.iter().map(|p| p.len()).sum();
    let mut out = DVector::zeros(n);
    let mut i = 0;
    for p in parts {
        out.rows_mut(i, p.len()).copy_from(*p);
        i += p.len();
    }
    out
}

/// Picks a maximal linearly independent subset of the rows of `a` by
/// modified Gram-Schmidt, then verifies that the dropped rows are consistent
/// with `b`. Returns the reduced `(a, b)`.
///
/// Dependent rows whose right-hand side disagrees give [`Error::Infeasible`].
pub fn reduce_rows(a: &DMatrix<f64>, b: &DVector<f64>, rel_tol: f64) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let n = a.ncols();
    let scale = a.iter().fold(0.0_f64, |m, v| m.max(v.abs())).max(1.0);
    let mut basis: Vec<DVector<f64>> = Vec::new();
    let mut keep = Vec::new();
    for i in 0..a.nrows() {
        let mut v: DVector<f64> = a.row(i).transpose();
        for q in &basis {
            let c = q.dot(&v);
            v.axpy(-c, q, 1.0);
        }
        // second pass for numerical orthogonality
        for q in &basis {
            let c = q.dot(&v);
            v.axpy(-c, q, 1.0);
        }
        let nv = v.norm();
        if nv > rel_tol * scale {
            basis.push(v / nv);
            keep.push(i);
        }
    }
    let mut ra = DMatrix::zeros(keep.len(), n);
    let mut rb = DVector::zeros(keep.len());
    for (r, &i) in keep.iter().enumerate() {
        ra.set_row(r, &a.row(i));
        rb[r] = b[i];
    }
    if keep.len() < a.nrows() {
        // consistency: the minimum-norm solution of the kept rows must satisfy all rows
        let x = min_norm_solution(&ra, &rb)?;
        let resid = a * &x - b;
        let bscale = b.amax().max(1.0);
        if resid.amax() > 1e-7 * bscale {
            return Err(Error::Infeasible(format!(
                "dependent constraint rows disagree (residual {:.3e})",
                resid.amax()
            )));
        }
    }
    Ok((ra, rb))
}

/// Minimum-norm solution of a full-row-rank system `a x = b`.
pub fn min_norm_solution(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    if a.nrows() == 0 {
        return Ok(DVector::zeros(a.ncols()));
    }
    let aat = a * a.transpose();
    let chol = aat
        .cholesky()
        .ok_or_else(|| Error::IllPosed("constraint rows are linearly dependent".into()))?;
    Ok(a.transpose() * chol.solve(b))
}

/// Least-squares solution via SVD, treating singular values below
/// `rel_tol * sigma_max` as zero.
pub fn lstsq(a: &DMatrix<f64>, b: &DVector<f64>, rel_tol: f64) -> DVector<f64> {
    let svd = a.clone().svd(true, true);
    let max = svd.singular_values.iter().cloned().fold(0.0_f64, f64::max);
    svd.solve(b, rel_tol * max.max(f64::MIN_POSITIVE))
        .expect("SVD computed with both U and V")
}

/// Orthonormal basis of the null space of `a` (columns), using a full SVD.
pub fn null_space(a: &DMatrix<f64>, rel_tol: f64) -> DMatrix<f64> {
    let n = a.ncols();
    if a.nrows() == 0 {
        return DMatrix::identity(n, n);
    }
    // pad to a square matrix so that the SVD exposes the full right basis
    let padded = if a.nrows() < n {
        let mut p = DMatrix::zeros(n, n);
        p.view_mut((0, 0), (a.nrows(), n)).copy_from(a);
        p
    } else {
        a.clone()
    };
    let svd = padded.svd(false, true);
    let v_t = svd.v_t.expect("requested V^T");
    let max = svd.singular_values.iter().cloned().fold(0.0_f64, f64::max);
    let cols: Vec<usize> = (0..svd.singular_values.len())
        .filter(|&i| svd.singular_values[i] <= rel_tol * max.max(f64::MIN_POSITIVE))
        .collect();
    let mut z = DMatrix::zeros(n, cols.len());
    for (c, &i) in cols.iter().enumerate() {
        z.set_column(c, &v_t.row(i).transpose());
    }
    z
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rank_of_rank_deficient_matrix() {
        let m = DMatrix::from_row_slice(3, 3, &[1.0, 2.0, 3.0, 2.0, 4.0, 6.0, 0.0, 1.0, 1.0]);
        assert_eq!(numeric_rank(&m, DEFAULT_RANK_TOL), 2);
        assert_eq!(numeric_rank(&DMatrix::zeros(0, 4), DEFAULT_RANK_TOL), 0);
    }

    #[test]
    fn reduce_rows_drops_consistent_duplicates() {
        let a = DMatrix::from_row_slice(3, 2, &[1.0, 1.0, 2.0, 2.0, 1.0, 0.0]);
        let b = DVector::from_vec(vec![2.0, 4.0, 1.0]);
        let (ra, rb) = reduce_rows(&a, &b, 1e-10).unwrap();
        assert_eq!(ra.nrows(), 2);
        assert_eq!(rb.len(), 2);
    }

    #[test]
    fn reduce_rows_detects_conflict() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 2.0, 2.0]);
        let b = DVector::from_vec(vec![2.0, 5.0]);
        assert!(matches!(reduce_rows(&a, &b, 1e-10), Err(Error::Infeasible(_))));
    }

    #[test]
    fn null_space_is_orthogonal_to_rows() {
        let a = DMatrix::from_row_slice(1, 3, &[1.0, 1.0, 1.0]);
        let z = null_space(&a, 1e-10);
        assert_eq!(z.ncols(), 2);
        assert!((&a * &z).amax() < 1e-12);
    }
}
