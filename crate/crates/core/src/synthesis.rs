//! Observer gain synthesis.
//!
//! The upper bound fixes `nu4` and `nu2` so the design problem becomes a
//! linear SDP; the lower bound lifts the bilinear products into rank-one
//! matrices and drops the rank constraints.

use lmi_sdp::{solve, Affine, LmiBuilder, LmiProblem, Scalar, SdpError, SdpOptions, SolveStatus};
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::models::is_detectable;
use crate::util::{from_rows, max_eig, min_eig, rows};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SynthesisError {
    #[error("(A, C) is not detectable")]
    NotDetectable,
    #[error("design problem infeasible (solver status {0:?})")]
    InfeasibleDesign(SolveStatus),
    #[error("solver failure: {0}")]
    Solver(String),
    #[error("every grid point is infeasible")]
    AllInfeasible,
    #[error("invalid synthesis input: {0}")]
    InvalidInput(String),
}

impl From<SdpError> for SynthesisError {
    fn from(e: SdpError) -> Self {
        SynthesisError::Solver(e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthesisInput {
    pub a: DMatrix<f64>,
    pub b_w: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub d_w: DMatrix<f64>,
    pub z: DMatrix<f64>,
    pub gamma_f: f64,
    pub gamma_l: f64,
    pub nu4: f64,
    pub nu2: f64,
}

impl SynthesisInput {
    fn n(&self) -> usize {
        self.a.nrows()
    }

    fn p(&self) -> usize {
        self.c.nrows()
    }

    fn m(&self) -> usize {
        self.b_w.ncols()
    }

    pub fn validate(&self) -> Result<(), SynthesisError> {
        let n = self.n();
        let bad = |s: &str| Err(SynthesisError::InvalidInput(s.to_string()));
        if self.a.ncols() != n || self.b_w.nrows() != n || self.c.ncols() != n {
            return bad("A, B_w, C dimensions");
        }
        if self.d_w.nrows() != self.p() || self.d_w.ncols() != self.m() {
            return bad("D_w dimensions");
        }
        if self.z.ncols() != n {
            return bad("Z must have n columns");
        }
        if !(self.gamma_f >= 0.0 && self.gamma_l >= 0.0) {
            return bad("Lipschitz constants must be nonnegative");
        }
        if !(self.nu4 > 0.0 && self.nu2 >= 0.0) {
            return bad("need nu4 > 0 and nu2 >= 0");
        }
        Ok(())
    }

    /// Copy with `Z` scaled to unit spectral norm, and the scale.
    fn normalized(&self) -> (SynthesisInput, f64) {
        let s = if self.z.is_empty() { 0.0 } else { self.z.singular_values().max() };
        if s > 0.0 {
            let mut n = self.clone();
            n.z /= s;
            (n, s)
        } else {
            (self.clone(), 1.0)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthesisOptions {
    /// Margin for strict inequalities.
    pub epsilon: f64,
    pub sdp: SdpOptions,
    /// Absolute cap on scalar moves per SCA round.
    pub sca_trust: f64,
}

impl Default for SynthesisOptions {
    fn default() -> Self {
        Self { epsilon: 1e-6, sdp: SdpOptions::default(), sca_trust: 0.5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignResiduals {
    /// Largest eigenvalue of each LMI block at the returned point.
    pub block1_max_eig: f64,
    pub block2_max_eig: f64,
    /// Same, for the unit-norm-Z problem the solver actually saw.
    pub normalized_max_eig: f64,
    pub p_min_eig: f64,
    /// `||P L - Y||_max`.
    pub gain_residual: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObserverDesign {
    pub l: DMatrix<f64>,
    pub p: DMatrix<f64>,
    pub y: DMatrix<f64>,
    /// `nu_1 .. nu_6`.
    pub nu: [f64; 6],
    pub mu_bar: f64,
    pub j_bar: f64,
    pub residuals: DesignResiduals,
}

/// Both blocks of the design inequalities evaluated directly from the
/// matrices, independent of the SDP assembly.
pub fn design_blocks(
    inp: &SynthesisInput,
    p: &DMatrix<f64>,
    y: &DMatrix<f64>,
    nu: &[f64; 6],
) -> (DMatrix<f64>, DMatrix<f64>) {
    let (n, pp, m) = (inp.n(), inp.p(), inp.m());
    let nz = inp.z.nrows();
    let [nu1, nu2, nu3, nu4, nu5, nu6] = *nu;
    let eye = |k: usize| DMatrix::<f64>::identity(k, k);
    let q = inp.a.transpose() * p + p * &inp.a - inp.c.transpose() * y.transpose() - y * &inp.c + p * nu4;
    let tl = q + eye(n) * (nu5 * inp.gamma_f.powi(2) + nu6 * inp.gamma_l.powi(2));
    let bl = inp.b_w.transpose() * p - inp.d_w.transpose() * y.transpose();
    let s1 = 2 * n + pp + m;
    let mut b1 = DMatrix::zeros(s1, s1);
    b1.view_mut((0, 0), (n, n)).copy_from(&tl);
    b1.view_mut((n, 0), (n, n)).copy_from(p);
    b1.view_mut((0, n), (n, n)).copy_from(p);
    b1.view_mut((n, n), (n, n)).copy_from(&(eye(n) * -nu5));
    b1.view_mut((2 * n, 0), (pp, n)).copy_from(&(-y.transpose()));
    b1.view_mut((0, 2 * n), (n, pp)).copy_from(&(-y));
    b1.view_mut((2 * n, 2 * n), (pp, pp)).copy_from(&(eye(pp) * -nu6));
    b1.view_mut((2 * n + pp, 0), (m, n)).copy_from(&bl);
    b1.view_mut((0, 2 * n + pp), (n, m)).copy_from(&bl.transpose());
    b1.view_mut((2 * n + pp, 2 * n + pp), (m, m)).copy_from(&(eye(m) * (-nu4 * nu1)));
    let s2 = n + m + nz;
    let mut b2 = DMatrix::zeros(s2, s2);
    b2.view_mut((0, 0), (n, n)).copy_from(&(-p));
    b2.view_mut((n, n), (m, m)).copy_from(&(eye(m) * -nu3));
    b2.view_mut((n + m, 0), (nz, n)).copy_from(&inp.z);
    b2.view_mut((0, n + m), (n, nz)).copy_from(&inp.z.transpose());
    b2.view_mut((n + m, n + m), (nz, nz)).copy_from(&(eye(nz) * -nu2));
    (b1, b2)
}

struct Vars {
    p: lmi_sdp::SymVar,
    y: lmi_sdp::MatVar,
    nu1: Scalar,
    nu3: Scalar,
    nu5: Scalar,
    nu6: Scalar,
}

fn zeros(r: usize, c: usize) -> Affine {
    Affine::zeros(r, c)
}

fn eye(k: usize, s: f64) -> DMatrix<f64> {
    DMatrix::identity(k, k) * s
}

/// How `nu4 P` and `nu4 nu1` enter the first block.
enum Bilinear<'a> {
    /// Fixed `nu4`.
    Fixed(f64),
    /// First-order expansion about `(nu4_0, P_0, nu1_0)` with `nu4` free.
    Linearized { nu4: Scalar, nu4_0: f64, p0: &'a DMatrix<f64>, nu1_0: f64 },
    /// Lifted variables `Xi` and `sigma`.
    Lifted { xi: &'a Affine, sigma: Scalar },
}

fn add_block1(
    b: &mut LmiBuilder,
    inp: &SynthesisInput,
    v: &Vars,
    bil: Bilinear,
) -> Result<(), SdpError> {
    let (n, pp, m) = (inp.n(), inp.p(), inp.m());
    let pa = Affine::sym(&v.p);
    let ya = Affine::mat(&v.y);
    let yc = ya.right_mul(&inp.c);
    let mut q = pa.right_mul(&inp.a).add(&pa.left_mul(&inp.a.transpose())).sub(&yc).sub(&yc.transpose());
    let corner = match bil {
        Bilinear::Fixed(nu4) => {
            q = q.add(&pa.scale(nu4));
            Affine::scaled(v.nu1, eye(m, -nu4))
        }
        Bilinear::Linearized { nu4, nu4_0, p0, nu1_0 } => {
            q = q
                .add(&pa.scale(nu4_0))
                .add(&Affine::scaled(nu4, p0.clone()))
                .sub(&Affine::constant(p0 * nu4_0));
            Affine::scaled(v.nu1, eye(m, -nu4_0))
                .add(&Affine::scaled(nu4, eye(m, -nu1_0)))
                .add(&Affine::identity(m, nu4_0 * nu1_0))
        }
        Bilinear::Lifted { xi, sigma } => {
            q = q.add(xi);
            Affine::scaled(sigma, eye(m, -1.0))
        }
    };
    let tl = q
        .add(&Affine::scaled(v.nu5, eye(n, inp.gamma_f.powi(2))))
        .add(&Affine::scaled(v.nu6, eye(n, inp.gamma_l.powi(2))));
    let bl = pa
        .left_mul(&inp.b_w.transpose())
        .sub(&ya.transpose().left_mul(&inp.d_w.transpose()));
    let grid = vec![
        vec![tl, pa.clone(), ya.scale(-1.0), bl.transpose()],
        vec![pa, Affine::scaled(v.nu5, eye(n, -1.0)), zeros(n, pp), zeros(n, m)],
        vec![ya.transpose().scale(-1.0), zeros(pp, n), Affine::scaled(v.nu6, eye(pp, -1.0)), zeros(pp, m)],
        vec![bl, zeros(m, n), zeros(m, pp), corner],
    ];
    b.nsd(Affine::blocks(&grid)?)
}

/// `nu2` is either a constant or a variable.
fn add_block2(
    b: &mut LmiBuilder,
    inp: &SynthesisInput,
    v: &Vars,
    nu2: Result<f64, Scalar>,
) -> Result<(), SdpError> {
    let (n, m) = (inp.n(), inp.m());
    let nz = inp.z.nrows();
    let pa = Affine::sym(&v.p);
    let corner = match nu2 {
        Ok(c) => Affine::identity(nz, -c),
        Err(s) => Affine::scaled(s, eye(nz, -1.0)),
    };
    let zc = Affine::constant(inp.z.clone());
    let grid = vec![
        vec![pa.scale(-1.0), zeros(n, m), zc.transpose()],
        vec![zeros(m, n), Affine::scaled(v.nu3, eye(m, -1.0)), zeros(m, nz)],
        vec![zc, zeros(nz, m), corner],
    ];
    b.nsd(Affine::blocks(&grid)?)?;
    b.pd(Affine::sym(&v.p))
}

fn new_vars(b: &mut LmiBuilder, inp: &SynthesisInput) -> Vars {
    Vars {
        p: b.sym_var("P", inp.n()),
        y: b.mat_var("Y", inp.n(), inp.p()),
        nu1: b.scalar_var("nu1"),
        nu3: b.scalar_var("nu3"),
        nu5: b.scalar_var("nu5"),
        nu6: b.scalar_var("nu6"),
    }
}

/// `Inaccurate` solves are fine for designs, whose LMIs are re-verified,
/// but not for certified lower bounds.
fn solve_checked(prob: &LmiProblem, opts: &SynthesisOptions, allow_inaccurate: bool) -> Result<DVector<f64>, SynthesisError> {
    let sol = solve(prob, &opts.sdp)?;
    match sol.status {
        SolveStatus::Optimal => Ok(sol.x),
        SolveStatus::Inaccurate if allow_inaccurate => Ok(sol.x),
        SolveStatus::Infeasible => Err(SynthesisError::InfeasibleDesign(sol.status)),
        s => Err(SynthesisError::Solver(format!("solver stopped with status {s:?}"))),
    }
}

fn scalar(prob: &LmiProblem, name: &str, x: &DVector<f64>) -> f64 {
    prob.extract_scalar(name, x).unwrap_or(0.0)
}

/// Packs a solution found for unit-norm `Z` back to the caller's scale.
fn finish(
    inp: &SynthesisInput,
    norm: &SynthesisInput,
    s: f64,
    p: DMatrix<f64>,
    y: DMatrix<f64>,
    nu: [f64; 6],
) -> Result<ObserverDesign, SynthesisError> {
    let (b1n, b2n) = design_blocks(norm, &p, &y, &nu);
    let normalized_max_eig = max_eig(&b1n).max(max_eig(&b2n));
    let s2 = s * s;
    let p = p * s2;
    let y = y * s2;
    let nu = [nu[0] * s2, nu[1], nu[2] * s2, nu[3], nu[4] * s2, nu[5] * s2];
    let l = p
        .clone()
        .cholesky()
        .map(|c| c.solve(&y))
        .or_else(|| p.clone().lu().solve(&y))
        .ok_or_else(|| SynthesisError::Solver("P is singular".into()))?;
    let (b1, b2) = design_blocks(inp, &p, &y, &nu);
    let j_bar = nu[0] * nu[1] + nu[2];
    let residuals = DesignResiduals {
        block1_max_eig: max_eig(&b1),
        block2_max_eig: max_eig(&b2),
        normalized_max_eig,
        p_min_eig: min_eig(&p),
        gain_residual: (&p * &l - &y).amax(),
    };
    Ok(ObserverDesign {
        l,
        p,
        y,
        nu,
        mu_bar: j_bar.max(0.0).sqrt(),
        j_bar,
        residuals,
    })
}

/// Upper bound and gain with `nu4`, `nu2` fixed: minimize `nu2 nu1 + nu3`.
pub fn synthesize_upper(inp: &SynthesisInput, opts: &SynthesisOptions) -> Result<ObserverDesign, SynthesisError> {
    inp.validate()?;
    if !is_detectable(&inp.a, &inp.c) {
        return Err(SynthesisError::NotDetectable);
    }
    let (norm, s) = inp.normalized();
    let mut b = LmiBuilder::new(opts.epsilon);
    let v = new_vars(&mut b, &norm);
    b.add_objective(v.nu1, norm.nu2);
    b.add_objective(v.nu3, 1.0);
    // nu3, nu5, nu6 >= 0 and nu4 nu1 >= 0 are implied by the block diagonals
    add_block1(&mut b, &norm, &v, Bilinear::Fixed(norm.nu4))?;
    add_block2(&mut b, &norm, &v, Ok(norm.nu2))?;
    let prob = b.build()?;
    let x = solve_checked(&prob, opts, true)?;
    let p = prob.extract("P", &x).unwrap_or_else(|| DMatrix::zeros(0, 0));
    let y = prob.extract("Y", &x).unwrap_or_else(|| DMatrix::zeros(0, 0));
    let nu = [
        scalar(&prob, "nu1", &x),
        norm.nu2,
        scalar(&prob, "nu3", &x),
        norm.nu4,
        scalar(&prob, "nu5", &x),
        scalar(&prob, "nu6", &x),
    ];
    finish(inp, &norm, s, p, y, nu)
}

/// Successive convex approximation over `(nu1, nu2, nu4)`. Each round
/// linearizes the bilinear terms about the incumbent, then re-solves the
/// fixed-scalar problem at the proposed `(nu4, nu2)`; a proposal is kept only
/// if it lowers the objective, otherwise the trust radius is halved.
pub fn sca_refine(
    inp: &SynthesisInput,
    seed: &ObserverDesign,
    rounds: usize,
    opts: &SynthesisOptions,
) -> Result<ObserverDesign, SynthesisError> {
    let mut best = seed.clone();
    let mut base = inp.clone();
    base.nu2 = seed.nu[1];
    base.nu4 = seed.nu[3];
    let mut trust = opts.sca_trust;
    for _ in 0..rounds {
        if trust < 1e-3 {
            break;
        }
        let (norm, s) = base.normalized();
        let s2 = s * s;
        let p0 = &best.p / s2;
        let nu1_0 = best.nu[0] / s2;
        let (nu2_0, nu4_0) = (best.nu[1], best.nu[3]);

        let mut b = LmiBuilder::new(opts.epsilon);
        let v = new_vars(&mut b, &norm);
        let nu2 = b.scalar_var("nu2");
        let nu4 = b.scalar_var("nu4");
        // nu1 nu2 ~ nu1 nu2_0 + nu1_0 nu2 - const
        b.add_objective(v.nu1, nu2_0);
        b.add_objective(nu2, nu1_0);
        b.add_objective(v.nu3, 1.0);
        add_block1(&mut b, &norm, &v, Bilinear::Linearized { nu4, nu4_0, p0: &p0, nu1_0 })?;
        add_block2(&mut b, &norm, &v, Err(nu2))?;
        b.lower_bound(v.nu1, 0.0)?;
        b.lower_bound(nu4, opts.epsilon)?;
        for (var, c) in [(nu4, nu4_0), (nu2, nu2_0), (v.nu1, nu1_0)] {
            b.lower_bound(var, c - trust)?;
            b.nsd(Affine::scalar(var).sub(&Affine::constant(DMatrix::from_element(1, 1, c + trust))))?;
        }
        let prob = b.build()?;
        let x = match solve_checked(&prob, opts, true) {
            Ok(x) => x,
            Err(_) => {
                trust *= 0.5;
                continue;
            }
        };
        let mut cand_inp = base.clone();
        cand_inp.nu2 = scalar(&prob, "nu2", &x).max(0.0);
        cand_inp.nu4 = scalar(&prob, "nu4", &x).max(opts.epsilon);
        match synthesize_upper(&cand_inp, opts) {
            Ok(d) if d.j_bar < best.j_bar => {
                let rel = (best.j_bar - d.j_bar) / best.j_bar.abs().max(f64::MIN_POSITIVE);
                best = d;
                base = cand_inp;
                if rel < 1e-4 {
                    break;
                }
            }
            _ => trust *= 0.5,
        }
    }
    Ok(best)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelaxationResiduals {
    /// Largest violation of the lifting equalities.
    pub max_equality: f64,
    /// Smallest eigenvalue over all lifted Schur blocks.
    pub min_lifted_eig: f64,
    /// Largest eigenvalue over the two design blocks.
    pub max_block_eig: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RelaxationCertificate {
    pub j_lower: f64,
    pub p: DMatrix<f64>,
    pub y: DMatrix<f64>,
    pub nu: [f64; 6],
    pub xi: DMatrix<f64>,
    /// `((i, j), Psi_ij)` for `i <= j`.
    pub psi: Vec<((usize, usize), DMatrix<f64>)>,
    pub phi: DMatrix<f64>,
    pub theta: DMatrix<f64>,
    pub lambda: f64,
    pub sigma: f64,
    pub residuals: RelaxationResiduals,
}

fn column(entries: &[Affine]) -> Affine {
    let grid: Vec<Vec<Affine>> = entries.iter().map(|e| vec![e.clone()]).collect();
    Affine::blocks(&grid).expect("scalar column")
}

/// `[[M, v], [v^T, 1]] >= 0` together with `M_12 = rhs`.
fn add_lifting(b: &mut LmiBuilder, name: &str, vec3: [Affine; 3], rhs: Affine) -> Result<lmi_sdp::SymVar, SdpError> {
    let m = b.sym_var(name, 3);
    let col = column(&vec3);
    let grid = vec![
        vec![Affine::sym(&m), col.clone()],
        vec![col.transpose(), Affine::identity(1, 1.0)],
    ];
    b.psd(Affine::blocks(&grid)?)?;
    b.equal_zero(Affine::scalar(m.entry(0, 1)).sub(&rhs))?;
    Ok(m)
}

fn sym3(prob: &LmiProblem, name: &str, x: &DVector<f64>) -> DMatrix<f64> {
    prob.extract(name, x).unwrap_or_else(|| DMatrix::zeros(3, 3))
}

fn lifted_block(m: &DMatrix<f64>, v: [f64; 3]) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(4, 4);
    out.view_mut((0, 0), (3, 3)).copy_from(m);
    for i in 0..3 {
        out[(i, 3)] = v[i];
        out[(3, i)] = v[i];
    }
    out[(3, 3)] = 1.0;
    out
}

/// Convex relaxation with `nu1`, `nu2`, `nu4` free; `J_lower = lambda + nu3`.
pub fn relax_lower(inp: &SynthesisInput, opts: &SynthesisOptions) -> Result<RelaxationCertificate, SynthesisError> {
    inp.validate()?;
    let (norm, s) = inp.normalized();
    let n = norm.n();
    let mut b = LmiBuilder::new(opts.epsilon);
    let v = new_vars(&mut b, &norm);
    let nu2 = b.scalar_var("nu2");
    let nu4 = b.scalar_var("nu4");
    let xi = b.sym_var("Xi", n);
    let lambda = b.scalar_var("lambda");
    let sigma = b.scalar_var("sigma");
    b.add_objective(lambda, 1.0);
    b.add_objective(v.nu3, 1.0);
    let xia = Affine::sym(&xi);
    add_block1(&mut b, &norm, &v, Bilinear::Lifted { xi: &xia, sigma })?;
    add_block2(&mut b, &norm, &v, Err(nu2))?;
    b.pd(xia.clone())?;
    b.lower_bound(nu4, opts.epsilon)?;
    b.lower_bound(v.nu1, 0.0)?;
    b.lower_bound(lambda, 0.0)?;
    b.lower_bound(sigma, 0.0)?;
    let mut psi_names = Vec::new();
    for i in 0..n {
        for j in i..n {
            let name = format!("Psi_{i}_{j}");
            let pij = Affine::scalar(v.p.entry(i, j));
            let xij = Affine::scalar(xi.entry(i, j));
            add_lifting(&mut b, &name, [Affine::scalar(nu4), pij, xij.clone()], xij)?;
            psi_names.push(((i, j), name));
        }
    }
    add_lifting(
        &mut b,
        "Phi",
        [Affine::scalar(v.nu1), Affine::scalar(nu4), Affine::scalar(sigma)],
        Affine::scalar(sigma),
    )?;
    add_lifting(
        &mut b,
        "Theta",
        [Affine::scalar(v.nu1), Affine::scalar(nu2), Affine::scalar(lambda)],
        Affine::scalar(lambda),
    )?;
    let prob = b.build()?;
    let x = solve_checked(&prob, opts, false)?;

    let s2 = s * s;
    let pn = prob.extract("P", &x).unwrap_or_else(|| DMatrix::zeros(n, n));
    let yn = prob.extract("Y", &x).unwrap_or_else(|| DMatrix::zeros(n, norm.p()));
    let xin = prob.extract("Xi", &x).unwrap_or_else(|| DMatrix::zeros(n, n));
    let nun = [
        scalar(&prob, "nu1", &x),
        scalar(&prob, "nu2", &x),
        scalar(&prob, "nu3", &x),
        scalar(&prob, "nu4", &x),
        scalar(&prob, "nu5", &x),
        scalar(&prob, "nu6", &x),
    ];
    let (lam_n, sig_n) = (scalar(&prob, "lambda", &x), scalar(&prob, "sigma", &x));

    // residuals in the solver's scale, recomputed from the extracted matrices
    let mut max_equality: f64 = 0.0;
    let mut min_lifted_eig = f64::INFINITY;
    let mut psi = Vec::new();
    let diag_scale = |d: [f64; 3], m: &DMatrix<f64>| {
        DMatrix::from_fn(3, 3, |r, c| m[(r, c)] * d[r] * d[c])
    };
    for ((i, j), name) in &psi_names {
        let m = sym3(&prob, name, &x);
        let vv = [nun[3], pn[(*i, *j)], xin[(*i, *j)]];
        max_equality = max_equality.max((m[(0, 1)] - xin[(*i, *j)]).abs());
        min_lifted_eig = min_lifted_eig.min(min_eig(&lifted_block(&m, vv)));
        psi.push(((*i, *j), diag_scale([1.0, s2, s2], &m)));
    }
    let phi = sym3(&prob, "Phi", &x);
    let theta = sym3(&prob, "Theta", &x);
    max_equality = max_equality.max((phi[(0, 1)] - sig_n).abs()).max((theta[(0, 1)] - lam_n).abs());
    min_lifted_eig = min_lifted_eig
        .min(min_eig(&lifted_block(&phi, [nun[0], nun[3], sig_n])))
        .min(min_eig(&lifted_block(&theta, [nun[0], nun[1], lam_n])));

    // the relaxed first block, rebuilt directly
    let mut lifted_inp = norm.clone();
    lifted_inp.nu4 = 0.0;
    let (mut b1, b2) = design_blocks(&lifted_inp, &pn, &yn, &[0.0, nun[1], nun[2], 0.0, nun[4], nun[5]]);
    let mut tl = b1.view_mut((0, 0), (n, n));
    tl += &xin;
    let m = norm.m();
    let off = 2 * n + norm.p();
    for k in 0..m {
        b1[(off + k, off + k)] = -sig_n;
    }
    let max_block_eig = max_eig(&b1).max(max_eig(&b2));

    let nu = [nun[0] * s2, nun[1], nun[2] * s2, nun[3], nun[4] * s2, nun[5] * s2];
    Ok(RelaxationCertificate {
        j_lower: (lam_n + nun[2]) * s2,
        p: pn * s2,
        y: yn * s2,
        nu,
        xi: xin * s2,
        psi,
        phi: diag_scale([s2, 1.0, s2], &phi),
        theta: diag_scale([s2, 1.0, s2], &theta),
        lambda: lam_n * s2,
        sigma: sig_n * s2,
        residuals: RelaxationResiduals { max_equality, min_lifted_eig, max_block_eig },
    })
}

/// Best fixed-scalar design over a grid of `(nu4, nu2)`; ties go to the
/// smaller `nu4`, then the smaller `nu2`.
pub fn grid_search_nu(
    inp: &SynthesisInput,
    nu4_grid: &[f64],
    nu2_grid: &[f64],
    opts: &SynthesisOptions,
) -> Result<ObserverDesign, SynthesisError> {
    if nu4_grid.is_empty() || nu2_grid.is_empty() {
        return Err(SynthesisError::InvalidInput("empty grid".into()));
    }
    if nu4_grid.iter().chain(nu2_grid).any(|v| !(*v > 0.0)) {
        return Err(SynthesisError::InvalidInput("grid values must be positive".into()));
    }
    let points: Vec<(f64, f64)> = nu4_grid
        .iter()
        .flat_map(|a| nu2_grid.iter().map(move |b| (*a, *b)))
        .collect();
    let results: Vec<Option<ObserverDesign>> = points
        .par_iter()
        .map(|(nu4, nu2)| {
            let mut i = inp.clone();
            i.nu4 = *nu4;
            i.nu2 = *nu2;
            synthesize_upper(&i, opts).ok()
        })
        .collect();
    // solver accuracy, in the caller's units
    let s2 = inp.normalized().1.powi(2);
    let tie_tol = |a: f64, b: f64| 10.0 * opts.sdp.gap_tol * a.abs().max(b.abs()).max(s2);
    let mut best: Option<ObserverDesign> = None;
    for d in results.into_iter().flatten() {
        best = match best {
            None => Some(d),
            Some(b) => {
                let tie = (d.j_bar - b.j_bar).abs() <= tie_tol(d.j_bar, b.j_bar);
                let better = if tie {
                    (d.nu[3], d.nu[1]) < (b.nu[3], b.nu[1])
                } else {
                    d.j_bar < b.j_bar
                };
                Some(if better { d } else { b })
            }
        };
    }
    best.ok_or(SynthesisError::AllInfeasible)
}

/// JSON form of a design.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignRecord {
    pub schema_version: u32,
    pub l: Vec<Vec<f64>>,
    pub p: Vec<Vec<f64>>,
    pub y: Vec<Vec<f64>>,
    pub nu: [f64; 6],
    pub mu_bar: f64,
    pub j_bar: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub j_lower: Option<f64>,
    pub residuals: DesignResiduals,
}

impl ObserverDesign {
    pub fn to_record(&self, j_lower: Option<f64>) -> DesignRecord {
        DesignRecord {
            schema_version: 1,
            l: rows(&self.l),
            p: rows(&self.p),
            y: rows(&self.y),
            nu: self.nu,
            mu_bar: self.mu_bar,
            j_bar: self.j_bar,
            j_lower,
            residuals: self.residuals.clone(),
        }
    }

    pub fn from_record(r: &DesignRecord) -> Option<Self> {
        Some(Self {
            l: from_rows(&r.l)?,
            p: from_rows(&r.p)?,
            y: from_rows(&r.y)?,
            nu: r.nu,
            mu_bar: r.mu_bar,
            j_bar: r.j_bar,
            residuals: r.residuals.clone(),
        })
    }
}
