use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen, LU, SVD};
use serde::{Deserialize, Serialize};

use crate::{LmiProblem, SdpError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SdpOptions {
    /// Bound on the largest eigenvalue of every block and on the equality
    /// residuals at an optimal point.
    pub feas_tol: f64,
    /// Duality gap bound, relative to `max(1, |objective|)`.
    pub gap_tol: f64,
    pub max_iter: usize,
    /// Fraction of the distance to the cone boundary taken per step.
    pub step_fraction: f64,
    /// Threshold on the normalized Farkas residual used to declare infeasibility.
    pub infeas_tol: f64,
    /// Relative residual allowed in the multiplier equations. Looser than
    /// `feas_tol` since it only affects the certified lower bound.
    pub dual_tol: f64,
    /// Looser gap and multiplier bounds under which a stalled solve still
    /// returns its primal-feasible iterate, flagged `Inaccurate`.
    pub inaccurate_gap_tol: f64,
    pub inaccurate_dual_tol: f64,
}

impl Default for SdpOptions {
    fn default() -> Self {
        Self {
            feas_tol: 1e-8,
            gap_tol: 1e-7,
            max_iter: 200,
            step_fraction: 0.98,
            infeas_tol: 1e-8,
            dual_tol: 1e-6,
            inaccurate_gap_tol: 1e-5,
            inaccurate_dual_tol: 1e-3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    /// Primal feasible with a small gap, but the multipliers never met
    /// `dual_tol`; the lower bound `dual_obj` is approximate.
    Inaccurate,
    MaxIter,
    NumericalFailure,
}

#[derive(Debug, Clone)]
pub struct SdpSolution {
    pub x: DVector<f64>,
    pub status: SolveStatus,
    /// `c^T x`.
    pub primal_obj: f64,
    /// Lower bound on the optimum certified by the multipliers.
    pub dual_obj: f64,
    /// Largest eigenvalue of `F_b(x)` over all blocks.
    pub max_residual: f64,
    /// `||E x - g||_inf`.
    pub eq_residual: f64,
    pub iterations: usize,
    /// Multiplier matrices, one per block.
    pub multipliers: Vec<DMatrix<f64>>,
}

impl SdpSolution {
    pub fn is_optimal(&self) -> bool {
        self.status == SolveStatus::Optimal
    }

    pub fn duality_gap(&self) -> f64 {
        self.primal_obj - self.dual_obj
    }
}

/// Per-block data of the standard form `S = C - sum_i y_i A_i >= 0`.
struct BlockData {
    n: usize,
    c: DMatrix<f64>,
    a: Vec<(usize, DMatrix<f64>)>,
}

/// Nesterov-Todd scaling of one block: `W = G G^T`, `G^{-1} X G^{-T} = G^T S G = diag(d)`.
struct Scaling {
    g: DMatrix<f64>,
    g_inv: DMatrix<f64>,
    w: DMatrix<f64>,
    d: DVector<f64>,
}

fn inner(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.dot(b)
}

fn sym(m: DMatrix<f64>) -> DMatrix<f64> {
    (&m + m.transpose()) * 0.5
}

fn lambda_max(m: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(sym(m.clone()))
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max)
}

fn nt_scaling(x: &DMatrix<f64>, s: &DMatrix<f64>) -> Option<Scaling> {
    let lx = Cholesky::new(x.clone())?.l();
    let ls = Cholesky::new(s.clone())?.l();
    let svd = SVD::new(ls.transpose() * &lx, false, true);
    let v = svd.v_t?.transpose();
    let d = svd.singular_values;
    if d.iter().any(|&di| !(di > 0.0) || !di.is_finite()) {
        return None;
    }
    let n = d.len();
    let mut dm_half = DMatrix::zeros(n, n);
    let mut dp_half = DMatrix::zeros(n, n);
    for i in 0..n {
        dm_half[(i, i)] = 1.0 / d[i].sqrt();
        dp_half[(i, i)] = d[i].sqrt();
    }
    let g = &lx * &v * &dm_half;
    let lx_inv = lx.clone().try_inverse()?;
    let g_inv = &dp_half * v.transpose() * lx_inv;
    let w = sym(&g * g.transpose());
    Some(Scaling { g, g_inv, w, d })
}

/// Largest `alpha` with `M + alpha dM >= 0`, given the Cholesky factor of `M`.
fn max_step(m: &DMatrix<f64>, dm: &DMatrix<f64>) -> Option<f64> {
    let l = Cholesky::new(m.clone())?.l();
    let li = l.try_inverse()?;
    let t = sym(&li * dm * li.transpose());
    let lmin = SymmetricEigen::new(t)
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    Some(if lmin < 0.0 { -1.0 / lmin } else { f64::INFINITY })
}

/// Solves an LMI problem with an infeasible-start primal-dual path-following
/// method (NT scaling, Mehrotra predictor-corrector).
///
/// The LMI problem is the dual-standard form `max b^T y, C - sum y_i A_i = S >= 0,
/// E y = g` with `y = x`, `b = -c`, `C_b = -F0_b`, `A_ib = F_ib`. Its
/// multipliers `X_b >= 0`, `z` satisfy `<A_i, X> + (E^T z)_i = b_i`.
pub fn solve(p: &LmiProblem, opts: &SdpOptions) -> Result<SdpSolution, SdpError> {
    p.validate()?;
    let m = p.n_vars;
    let neq = p.eq_matrix.nrows();
    let b: DVector<f64> = -&p.objective;
    let g = &p.eq_rhs;
    let et = p.eq_matrix.transpose();
    let blocks: Vec<BlockData> = p
        .blocks
        .iter()
        .map(|blk| BlockData {
            n: blk.size,
            c: -&blk.constant,
            a: blk.coeffs.clone(),
        })
        .collect();
    let n_total: usize = blocks.iter().map(|b| b.n).sum();
    let b_norm = b.norm();

    let mut xs: Vec<DMatrix<f64>> = Vec::with_capacity(blocks.len());
    let mut ss: Vec<DMatrix<f64>> = Vec::with_capacity(blocks.len());
    for bl in &blocks {
        let nf = bl.n as f64;
        let mut xi = 10f64.max(nf.sqrt());
        let mut eta = 10f64.max(nf.sqrt()).max(bl.c.norm());
        for (i, a) in &bl.a {
            let an = a.norm();
            xi = xi.max(nf * (1.0 + b[*i].abs()) / (1.0 + an));
            eta = eta.max(an);
        }
        xs.push(DMatrix::identity(bl.n, bl.n) * xi);
        ss.push(DMatrix::identity(bl.n, bl.n) * eta);
    }
    let mut y = DVector::zeros(m);
    let mut z = DVector::zeros(neq);

    let finish = |status: SolveStatus,
                  y: &DVector<f64>,
                  z: &DVector<f64>,
                  xs: &Vec<DMatrix<f64>>,
                  iterations: usize| {
        let primal_obj = p.objective.dot(y);
        let cx: f64 = blocks.iter().zip(xs).map(|(bl, x)| inner(&bl.c, x)).sum();
        let dual_obj = -(cx + g.dot(z));
        let max_residual = p
            .blocks
            .iter()
            .map(|blk| lambda_max(&blk.eval(y)))
            .fold(f64::NEG_INFINITY, f64::max);
        let eq_residual = if neq > 0 {
            (&p.eq_matrix * y - g).amax()
        } else {
            0.0
        };
        SdpSolution {
            x: y.clone(),
            status,
            primal_obj,
            dual_obj,
            max_residual,
            eq_residual,
            iterations,
            multipliers: xs.clone(),
        }
    };

    // last iterate good enough to report as Inaccurate if the method stalls
    let mut fallback: Option<(DVector<f64>, DVector<f64>, Vec<DMatrix<f64>>, usize)> = None;
    let bail = |status: SolveStatus,
                fallback: &Option<(DVector<f64>, DVector<f64>, Vec<DMatrix<f64>>, usize)>,
                y: &DVector<f64>,
                z: &DVector<f64>,
                xs: &Vec<DMatrix<f64>>,
                iter: usize| match fallback {
        Some((fy, fz, fx, fi)) => finish(SolveStatus::Inaccurate, fy, fz, fx, *fi),
        None => finish(status, y, z, xs, iter),
    };

    for iter in 0..opts.max_iter {
        // residuals
        let mut rp = b.clone();
        if neq > 0 {
            rp -= &et * &z;
        }
        let mut rd: Vec<DMatrix<f64>> = Vec::with_capacity(blocks.len());
        for (k, bl) in blocks.iter().enumerate() {
            let mut r = &bl.c - &ss[k];
            for (i, a) in &bl.a {
                rp[*i] -= inner(a, &xs[k]);
                r -= a * y[*i];
            }
            rd.push(r);
        }
        let re: DVector<f64> = if neq > 0 {
            g - &p.eq_matrix * &y
        } else {
            DVector::zeros(0)
        };
        let xs_dot: f64 = xs.iter().zip(&ss).map(|(x, s)| inner(x, s)).sum();
        let mu = xs_dot / n_total as f64;

        let primal_obj = p.objective.dot(&y);
        let cx: f64 = blocks.iter().zip(&xs).map(|(bl, x)| inner(&bl.c, x)).sum();
        let dual_obj = -(cx + g.dot(&z));

        // convergence
        let max_residual = p
            .blocks
            .iter()
            .map(|blk| lambda_max(&blk.eval(&y)))
            .fold(f64::NEG_INFINITY, f64::max);
        let eq_res = if neq > 0 { re.amax() } else { 0.0 };
        let rel_p = rp.norm() / (1.0 + b_norm);
        let gap = (primal_obj - dual_obj).abs().max(xs_dot);
        if max_residual <= opts.feas_tol
            && eq_res <= opts.feas_tol
            && rel_p <= opts.dual_tol
            && gap <= opts.gap_tol * primal_obj.abs().max(1.0)
        {
            return Ok(finish(SolveStatus::Optimal, &y, &z, &xs, iter));
        }
        if max_residual <= opts.feas_tol
            && eq_res <= opts.feas_tol
            && rel_p <= opts.inaccurate_dual_tol
            && gap <= opts.inaccurate_gap_tol * primal_obj.abs().max(1.0)
        {
            fallback = Some((y.clone(), z.clone(), xs.clone(), iter));
        }

        // Farkas certificate: X >= 0, A*(X) + E^T z = 0, <C, X> + g^T z < 0
        let t = cx + g.dot(&z);
        if t < 0.0 && (&b - &rp).norm() / -t <= opts.infeas_tol {
            return Ok(finish(SolveStatus::Infeasible, &y, &z, &xs, iter));
        }

        // scaling and Schur complement
        let mut scal = Vec::with_capacity(blocks.len());
        for k in 0..blocks.len() {
            match nt_scaling(&xs[k], &ss[k]) {
                Some(s) => scal.push(s),
                None => return Ok(bail(SolveStatus::NumericalFailure, &fallback, &y, &z, &xs, iter)),
            }
        }
        let dim = m + neq;
        let mut kkt = DMatrix::zeros(dim, dim);
        for (k, bl) in blocks.iter().enumerate() {
            let w = &scal[k].w;
            let waw: Vec<DMatrix<f64>> = bl.a.iter().map(|(_, a)| w * a * w).collect();
            for (jj, (j, _)) in bl.a.iter().enumerate() {
                for (i, ai) in &bl.a {
                    kkt[(*i, *j)] += inner(ai, &waw[jj]);
                }
            }
        }
        for r in 0..neq {
            for c in 0..m {
                kkt[(m + r, c)] = p.eq_matrix[(r, c)];
                kkt[(c, m + r)] = p.eq_matrix[(r, c)];
            }
        }
        // variables absent from every block would leave the Schur matrix singular
        for i in 0..m {
            if kkt[(i, i)] == 0.0 {
                kkt[(i, i)] = 1e-14;
            }
        }
        let lu: LU<f64, Dyn, Dyn> = kkt.lu();
        let wrdw: Vec<DMatrix<f64>> = scal
            .iter()
            .zip(&rd)
            .map(|(s, r)| &s.w * r * &s.w)
            .collect();

        let direction = |target: f64, corr: Option<&Vec<DMatrix<f64>>>| -> Option<Direction> {
            let mut rc = Vec::with_capacity(blocks.len());
            for (k, bl) in blocks.iter().enumerate() {
                let d = &scal[k].d;
                let mut r = DMatrix::zeros(bl.n, bl.n);
                for i in 0..bl.n {
                    r[(i, i)] = target - d[i] * d[i];
                }
                if let Some(c) = corr {
                    r -= &c[k];
                }
                for i in 0..bl.n {
                    for j in 0..bl.n {
                        r[(i, j)] *= 2.0 / (d[i] + d[j]);
                    }
                }
                rc.push(sym(&scal[k].g * r * scal[k].g.transpose()));
            }
            let mut rhs = DVector::zeros(dim);
            rhs.rows_mut(0, m).copy_from(&rp);
            for (k, bl) in blocks.iter().enumerate() {
                for (i, a) in &bl.a {
                    rhs[*i] += inner(a, &wrdw[k]) - inner(a, &rc[k]);
                }
            }
            if neq > 0 {
                rhs.rows_mut(m, neq).copy_from(&re);
            }
            let sol = lu.solve(&rhs)?;
            if sol.iter().any(|v| !v.is_finite()) {
                return None;
            }
            let dy = sol.rows(0, m).into_owned();
            let dz = sol.rows(m, neq).into_owned();
            let mut dss = Vec::with_capacity(blocks.len());
            let mut dxs = Vec::with_capacity(blocks.len());
            for (k, bl) in blocks.iter().enumerate() {
                let mut ds = rd[k].clone();
                for (i, a) in &bl.a {
                    ds -= a * dy[*i];
                }
                let ds = sym(ds);
                let dx = sym(&rc[k] - &scal[k].w * &ds * &scal[k].w);
                dss.push(ds);
                dxs.push(dx);
            }
            Some(Direction { dy, dz, dxs, dss })
        };

        let steps = |dir: &Direction| -> Option<(f64, f64)> {
            let mut ap = f64::INFINITY;
            let mut ad = f64::INFINITY;
            for k in 0..blocks.len() {
                ap = ap.min(max_step(&xs[k], &dir.dxs[k])?);
                ad = ad.min(max_step(&ss[k], &dir.dss[k])?);
            }
            Some((ap, ad))
        };

        let Some(pred) = direction(0.0, None) else {
            return Ok(bail(SolveStatus::NumericalFailure, &fallback, &y, &z, &xs, iter));
        };
        let Some((ap, ad)) = steps(&pred) else {
            return Ok(bail(SolveStatus::NumericalFailure, &fallback, &y, &z, &xs, iter));
        };
        let ap = ap.min(1.0);
        let ad = ad.min(1.0);
        let mut mu_aff = 0.0;
        for k in 0..blocks.len() {
            let xa = &xs[k] + &pred.dxs[k] * ap;
            let sa = &ss[k] + &pred.dss[k] * ad;
            mu_aff += inner(&xa, &sa);
        }
        mu_aff /= n_total as f64;
        let sigma = (mu_aff / mu).clamp(0.0, 1.0).powi(3);

        let corr: Vec<DMatrix<f64>> = (0..blocks.len())
            .map(|k| {
                let dxt = &scal[k].g_inv * &pred.dxs[k] * scal[k].g_inv.transpose();
                let dst = scal[k].g.transpose() * &pred.dss[k] * &scal[k].g;
                sym(&dxt * &dst)
            })
            .collect();
        let Some(dir) = direction(sigma * mu, Some(&corr)) else {
            return Ok(bail(SolveStatus::NumericalFailure, &fallback, &y, &z, &xs, iter));
        };
        let Some((ap, ad)) = steps(&dir) else {
            return Ok(bail(SolveStatus::NumericalFailure, &fallback, &y, &z, &xs, iter));
        };
        let ap = (opts.step_fraction * ap).min(1.0);
        let ad = (opts.step_fraction * ad).min(1.0);

        for k in 0..blocks.len() {
            xs[k] = sym(&xs[k] + &dir.dxs[k] * ap);
            ss[k] = sym(&ss[k] + &dir.dss[k] * ad);
        }
        y.axpy(ad, &dir.dy, 1.0);
        if neq > 0 {
            z.axpy(ap, &dir.dz, 1.0);
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Ok(bail(SolveStatus::NumericalFailure, &fallback, &y, &z, &xs, iter + 1));
        }
    }
    Ok(bail(SolveStatus::MaxIter, &fallback, &y, &z, &xs, opts.max_iter))
}

struct Direction {
    dy: DVector<f64>,
    dz: DVector<f64>,
    dxs: Vec<DMatrix<f64>>,
    dss: Vec<DMatrix<f64>>,
}
