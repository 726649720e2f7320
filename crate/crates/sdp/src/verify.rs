use nalgebra::SymmetricEigen;

use crate::{LmiProblem, SdpError, SdpOptions, SdpSolution, SolveStatus};

#[derive(Debug, Clone, PartialEq)]
pub struct VerifyReport {
    /// Largest eigenvalue of each block at the returned point.
    pub block_max_eig: Vec<f64>,
    pub max_residual: f64,
    pub eq_residual: f64,
}

/// Re-evaluates every block of `p` at `sol.x` from the problem data and
/// computes its spectrum directly. Fails when any residual exceeds ten
/// times the solver tolerance.
pub fn verify(p: &LmiProblem, sol: &SdpSolution, opts: &SdpOptions) -> Result<VerifyReport, SdpError> {
    if sol.status != SolveStatus::Optimal {
        return Err(SdpError::NotOptimal(sol.status));
    }
    let report = residuals(p, &sol.x);
    if report.max_residual > 10.0 * opts.feas_tol || report.eq_residual > 10.0 * opts.feas_tol {
        return Err(SdpError::VerificationFailed {
            max_residual: report.max_residual,
            eq_residual: report.eq_residual,
        });
    }
    Ok(report)
}

/// Residuals of an arbitrary point, without any status check.
pub fn residuals(p: &LmiProblem, x: &nalgebra::DVector<f64>) -> VerifyReport {
    let block_max_eig: Vec<f64> = p
        .blocks
        .iter()
        .map(|blk| {
            let mut f = nalgebra::DMatrix::from_fn(blk.size, blk.size, |i, j| blk.constant[(i, j)]);
            for (idx, fi) in &blk.coeffs {
                for i in 0..blk.size {
                    for j in 0..blk.size {
                        f[(i, j)] += x[*idx] * fi[(i, j)];
                    }
                }
            }
            let f = (&f + f.transpose()) * 0.5;
            SymmetricEigen::new(f)
                .eigenvalues
                .iter()
                .copied()
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .collect();
    let max_residual = block_max_eig.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let eq_residual = if p.eq_matrix.nrows() > 0 {
        (&p.eq_matrix * x - &p.eq_rhs).amax()
    } else {
        0.0
    };
    VerifyReport {
        block_max_eig,
        max_residual,
        eq_residual,
    }
}
