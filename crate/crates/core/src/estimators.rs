//! Runtime estimators: the continuous L-infinity observer and discrete
//! EKF / UKF / square-root UKF baselines, plus the noise generators.

use std::cell::Cell;
use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector, Vector2};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::integrate::{DormandPrince, IntegrateError, Interpolation, InputSignal, Tolerances, Trajectory};
use crate::models::PlantModel;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FilterError {
    #[error("covariance lost positive semidefiniteness at step {0}")]
    CovarianceNotPSD(usize),
    #[error("Cholesky factorization failed at step {0}")]
    CholeskyFailure(usize),
    #[error("Cholesky downdate failed at step {0}")]
    DowndateFailure(usize),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
}

// ---------------------------------------------------------------- observer

fn v2(v: &DVector<f64>) -> Vector2<f64> {
    Vector2::new(v[0], v[1])
}

fn dv(v: &Vector2<f64>) -> DVector<f64> {
    DVector::from_column_slice(v.as_slice())
}

/// Observer output prediction `C x + h_l(x,u) + D_u [r; u] + D_w r`.
pub fn observer_output(model: &PlantModel, r: &Vector2<f64>, x_hat: &DVector<f64>, u: &Vector2<f64>) -> DVector<f64> {
    &model.c * x_hat + dv(&model.h_l(x_hat, u)) + dv(&model.feedthrough(r, u)) + &model.d_w * dv(r)
}

/// `A x + f(x,u) + B_w r + L (y - y_hat)` on the nominal model.
pub fn observer_rhs(
    model: &PlantModel,
    l: &DMatrix<f64>,
    r: &Vector2<f64>,
    x_hat: &DVector<f64>,
    u: &Vector2<f64>,
    y_meas: &DVector<f64>,
) -> DVector<f64> {
    let y_hat = observer_output(model, r, x_hat, u);
    &model.a * x_hat + model.f(x_hat, u) + &model.b_w * dv(r) + l * (y_meas - y_hat)
}

/// Right-hand side of the estimation error `e = x - x_hat` written in terms
/// of the true state:
/// `(A - LC) e + (f(x) - f(x_hat)) - L (h_l(x) - h_l(x_hat)) + (B_w - L D_w) w`.
/// Both plant and observer use `model` here, so the plant must be nominal.
pub fn error_rhs(
    model: &PlantModel,
    l: &DMatrix<f64>,
    r: &Vector2<f64>,
    x: &DVector<f64>,
    e: &DVector<f64>,
    u: &Vector2<f64>,
    q: &Vector2<f64>,
) -> DVector<f64> {
    let x_hat = x - e;
    let w = dv(&(q - r));
    let df = model.f(x, u) - model.f(&x_hat, u);
    let dh = dv(&(model.h_l(x, u) - model.h_l(&x_hat, u)));
    (&model.a - l * &model.c) * e + df - l * dh + (&model.b_w - l * &model.d_w) * w
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ObserverOptions {
    pub tol: Tolerances,
    /// How the measurement is seen between frames. Hold is the default.
    pub y_mode: Interpolation,
}

impl Default for ObserverOptions {
    fn default() -> Self {
        Self { tol: Tolerances::default(), y_mode: Interpolation::Hold }
    }
}

/// Integrates the observer frame by frame over the measurement grid and
/// records `x_hat` at every frame time in `t_span`.
pub fn run_linf_observer(
    model: &PlantModel,
    l: &DMatrix<f64>,
    r: &Vector2<f64>,
    x_hat0: DVector<f64>,
    u_sig: &InputSignal,
    y_sig: &InputSignal,
    t_span: (f64, f64),
    opts: &ObserverOptions,
) -> Result<Trajectory, IntegrateError> {
    let (t0, tf) = t_span;
    if !(tf > t0) {
        return Err(IntegrateError::Invalid(format!("t_span ({t0}, {tf})")));
    }
    for s in [u_sig, y_sig] {
        if t0 < s.t0 - 1e-9 * s.dt || tf > s.t_end() + 1e-9 * s.dt {
            return Err(IntegrateError::OutOfRange { t: tf, lo: s.t0, hi: s.t_end() });
        }
    }
    if model.uncertainty != 0.0 {
        return Err(IntegrateError::Invalid("observer model must be nominal".into()));
    }
    let y_r = dv(&model.feedthrough(r, &Vector2::zeros())) + &model.d_w * dv(r);
    let dt = y_sig.dt;
    let first = y_sig.frame(t0);
    let frame = Cell::new(first);
    let rhs = |t: f64, x: &DVector<f64>| {
        // signals are validated above; a tiny overshoot is clamped
        let tc = t.clamp(u_sig.t0, u_sig.t_end());
        let u = v2(&u_sig.eval(tc).unwrap_or_else(|_| u_sig.samples[u_sig.frame(tc)].clone()));
        let y = match opts.y_mode {
            Interpolation::Hold => y_sig.samples[frame.get()].clone(),
            Interpolation::Linear => {
                let ty = t.clamp(y_sig.t0, y_sig.t_end());
                y_sig.eval(ty).unwrap_or_else(|_| y_sig.samples[y_sig.frame(ty)].clone())
            }
        };
        // same field as observer_rhs, without the A x / C x round trips
        let innov = y - dv(&model.y(x, &u)) - &y_r;
        let mut d = model.rhs(x, &u, r);
        d.gemv(1.0, l, &innov, 1.0);
        d
    };
    let mut dp = DormandPrince::new(rhs, t0, x_hat0.clone(), opts.tol, tf - t0)?;
    let mut times = vec![t0];
    let mut states = vec![x_hat0];
    let mut k = first;
    loop {
        let t_next = (y_sig.sample_time(k + 1)).min(tf);
        if t_next <= dp.t() + 1e-12 * dt {
            break;
        }
        if opts.y_mode == Interpolation::Hold && k > first {
            // held output jumps: the field moves by exactly L (y_k - y_{k-1})
            dp.shift_fsal(&(l * (&y_sig.samples[k] - &y_sig.samples[k - 1])));
        } else {
            dp.reset_fsal();
        }
        frame.set(k);
        let x = dp.advance_exact(t_next)?.clone();
        times.push(t_next);
        states.push(x);
        k += 1;
        if t_next >= tf {
            break;
        }
    }
    Ok(Trajectory { times, states, stats: dp.stats })
}

// ---------------------------------------------------------------- discrete models

/// Discrete-time model used by the Kalman-type filters.
pub trait DiscreteSystem {
    fn n(&self) -> usize;
    fn transition(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64>;
    fn transition_jac(&self, x: &DVector<f64>, u: &DVector<f64>) -> DMatrix<f64>;
    fn measure(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64>;
    fn measure_jac(&self, x: &DVector<f64>, u: &DVector<f64>) -> DMatrix<f64>;
}

/// `x+ = F x + G u`, `y = H x + D u`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearSystem {
    pub f: DMatrix<f64>,
    pub g: DMatrix<f64>,
    pub h: DMatrix<f64>,
    pub d: DMatrix<f64>,
}

impl DiscreteSystem for LinearSystem {
    fn n(&self) -> usize {
        self.f.nrows()
    }
    fn transition(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        &self.f * x + &self.g * u
    }
    fn transition_jac(&self, _: &DVector<f64>, _: &DVector<f64>) -> DMatrix<f64> {
        self.f.clone()
    }
    fn measure(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        &self.h * x + &self.d * u
    }
    fn measure_jac(&self, _: &DVector<f64>, _: &DVector<f64>) -> DMatrix<f64> {
        self.h.clone()
    }
}

/// Second-order Taylor map of the generator model with `B_w r` appended:
/// `x + Ts phi + Ts^2/2 J phi`.
#[derive(Debug, Clone)]
pub struct TaylorMap {
    pub model: PlantModel,
    pub r: Vector2<f64>,
    pub ts: f64,
}

/// `x + Ts phi + Ts^2/2 J phi`.
pub fn taylor_step(x: &DVector<f64>, phi: &DVector<f64>, j: &DMatrix<f64>, ts: f64) -> DVector<f64> {
    x + phi * ts + (j * phi) * (0.5 * ts * ts)
}

pub fn discretize_2nd_order(model: &PlantModel, r: &Vector2<f64>, ts: f64) -> TaylorMap {
    assert!(ts > 0.0, "sample period must be positive");
    TaylorMap { model: model.clone(), r: *r, ts }
}

impl DiscreteSystem for TaylorMap {
    fn n(&self) -> usize {
        self.model.n_x
    }
    fn transition(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        let u = v2(u);
        let phi = self.model.rhs(x, &u, &self.r);
        taylor_step(x, &phi, &self.model.jac_x(x, &u), self.ts)
    }
    /// Linearization `I + Ts J + Ts^2/2 J^2` (curvature of `J` neglected).
    fn transition_jac(&self, x: &DVector<f64>, u: &DVector<f64>) -> DMatrix<f64> {
        let j = self.model.jac_x(x, &v2(u));
        let n = self.n();
        DMatrix::identity(n, n) + &j * self.ts + (&j * &j) * (0.5 * self.ts * self.ts)
    }
    fn measure(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        let u = v2(u);
        dv(&self.model.y(x, &u)) + &self.model.d_w * dv(&self.r)
    }
    fn measure_jac(&self, x: &DVector<f64>, u: &DVector<f64>) -> DMatrix<f64> {
        self.model.jac_y(x, &v2(u))
    }
}

// ---------------------------------------------------------------- filters

/// Initial covariance `diag(pi/90, 2e-3 * 60 pi, 1e-3, 1e-3)`, padded with
/// `1e-3` for additional states.
pub fn default_p0(n: usize) -> DMatrix<f64> {
    let mut d = vec![1e-3; n];
    let head = [PI / 90.0, 2e-3 * 60.0 * PI, 1e-3, 1e-3];
    for (di, h) in d.iter_mut().zip(head) {
        *di = h;
    }
    DMatrix::from_diagonal(&DVector::from_vec(d))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SigmaParams {
    pub alpha: f64,
    pub beta: f64,
    pub kappa: f64,
}

impl Default for SigmaParams {
    fn default() -> Self {
        Self { alpha: 0.1, beta: 2.0, kappa: -1.0 }
    }
}

/// Scaled unscented-transform weights.
#[derive(Debug, Clone, PartialEq)]
pub struct SigmaWeights {
    pub gamma: f64,
    pub wm: Vec<f64>,
    pub wc: Vec<f64>,
}

impl SigmaParams {
    pub fn weights(&self, n: usize) -> SigmaWeights {
        let nf = n as f64;
        let lambda = self.alpha * self.alpha * (nf + self.kappa) - nf;
        let c = nf + lambda;
        let mut wm = vec![0.5 / c; 2 * n + 1];
        let mut wc = wm.clone();
        wm[0] = lambda / c;
        wc[0] = lambda / c + 1.0 - self.alpha * self.alpha + self.beta;
        SigmaWeights { gamma: c.sqrt(), wm, wc }
    }
}

fn sigma_points(x: &DVector<f64>, s: &DMatrix<f64>, gamma: f64) -> Vec<DVector<f64>> {
    let n = x.len();
    let mut pts = Vec::with_capacity(2 * n + 1);
    pts.push(x.clone());
    for i in 0..n {
        pts.push(x + s.column(i) * gamma);
    }
    for i in 0..n {
        pts.push(x - s.column(i) * gamma);
    }
    pts
}

/// Weighted mean written about the centre point; the weights sum to one and
/// the centre weight is large and negative for small `alpha`, so summing the
/// points directly would cancel badly.
fn weighted_mean(pts: &[DVector<f64>], wm: &[f64]) -> DVector<f64> {
    let mut m = pts[0].clone();
    for (p, w) in pts.iter().zip(wm).skip(1) {
        m += (p - &pts[0]) * *w;
    }
    m
}

fn cross_cov(a: &[DVector<f64>], am: &DVector<f64>, b: &[DVector<f64>], bm: &DVector<f64>, wc: &[f64]) -> DMatrix<f64> {
    let mut c = DMatrix::zeros(am.len(), bm.len());
    for ((ai, bi), w) in a.iter().zip(b).zip(wc) {
        c += (ai - am) * (bi - bm).transpose() * *w;
    }
    c
}

fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

fn check_psd(p: &DMatrix<f64>, step: usize) -> Result<(), FilterError> {
    if p.iter().any(|v| !v.is_finite()) {
        return Err(FilterError::CovarianceNotPSD(step));
    }
    let min = p.clone().symmetric_eigen().eigenvalues.min();
    if min < -1e-9 * p.amax().max(1.0) {
        return Err(FilterError::CovarianceNotPSD(step));
    }
    Ok(())
}

/// Any factor `F` with `F F^T = M` for a PSD `M`.
fn psd_factor(m: &DMatrix<f64>) -> DMatrix<f64> {
    if let Some(c) = m.clone().cholesky() {
        return c.l();
    }
    let e = symmetrize(m).symmetric_eigen();
    let d = e.eigenvalues.map(|v| v.max(0.0).sqrt());
    &e.eigenvectors * DMatrix::from_diagonal(&d)
}

/// Lower-triangular `S` with `S S^T = M M^T`, from a thin QR of `M^T`.
fn tria(m: &DMatrix<f64>) -> DMatrix<f64> {
    let r = m.transpose().qr().r();
    let mut s = r.transpose();
    for j in 0..s.ncols() {
        if s[(j, j)] < 0.0 {
            for i in 0..s.nrows() {
                s[(i, j)] = -s[(i, j)];
            }
        }
    }
    s
}

/// In-place rank-one update (`sign = 1`) or downdate (`sign = -1`) of a
/// lower-triangular Cholesky factor: `S S^T + sign v v^T`.
pub fn cholupdate(s: &mut DMatrix<f64>, v: &DVector<f64>, sign: f64) -> Result<(), ()> {
    let n = s.nrows();
    let mut x = v.clone();
    for k in 0..n {
        let skk = s[(k, k)];
        let r2 = skk * skk + sign * x[k] * x[k];
        if !(r2 > 0.0) || !r2.is_finite() || skk == 0.0 {
            return Err(());
        }
        let r = r2.sqrt();
        let c = r / skk;
        let sn = x[k] / skk;
        s[(k, k)] = r;
        for i in k + 1..n {
            s[(i, k)] = (s[(i, k)] + sign * sn * x[i]) / c;
            x[i] = c * x[i] - sn * s[(i, k)];
        }
    }
    Ok(())
}

/// Common interface of the discrete filters.
pub trait Filter {
    fn name(&self) -> &'static str;
    fn x(&self) -> &DVector<f64>;
    /// Covariance estimate (for the square-root filter, `S S^T`).
    fn covariance(&self) -> DMatrix<f64>;
    /// One predict/update cycle: predict with `u_prev`, update with `(u, y)`.
    fn step(
        &mut self,
        sys: &dyn DiscreteSystem,
        u_prev: &DVector<f64>,
        u: &DVector<f64>,
        y: &DVector<f64>,
    ) -> Result<(), FilterError>;
}

#[derive(Debug, Clone)]
pub struct Ekf {
    pub x: DVector<f64>,
    pub p: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    k: usize,
}

impl Ekf {
    pub fn new(x0: DVector<f64>, p0: DMatrix<f64>, q: DMatrix<f64>, r: DMatrix<f64>) -> Self {
        Self { x: x0, p: p0, q, r, k: 0 }
    }
}

impl Filter for Ekf {
    fn name(&self) -> &'static str {
        "ekf"
    }
    fn x(&self) -> &DVector<f64> {
        &self.x
    }
    fn covariance(&self) -> DMatrix<f64> {
        self.p.clone()
    }
    fn step(&mut self, sys: &dyn DiscreteSystem, u_prev: &DVector<f64>, u: &DVector<f64>, y: &DVector<f64>) -> Result<(), FilterError> {
        self.k += 1;
        let f = sys.transition_jac(&self.x, u_prev);
        let xp = sys.transition(&self.x, u_prev);
        let pp = symmetrize(&(&f * &self.p * f.transpose() + &self.q));
        let h = sys.measure_jac(&xp, u);
        let s = symmetrize(&(&h * &pp * h.transpose() + &self.r));
        let sc = s.cholesky().ok_or(FilterError::CovarianceNotPSD(self.k))?;
        // K = P H^T S^-1
        let k = sc.solve(&(&h * &pp)).transpose();
        self.x = &xp + &k * (y - sys.measure(&xp, u));
        let n = xp.len();
        let ikh = DMatrix::identity(n, n) - &k * &h;
        self.p = symmetrize(&(&ikh * &pp * ikh.transpose() + &k * &self.r * k.transpose()));
        check_psd(&self.p, self.k)
    }
}

#[derive(Debug, Clone)]
pub struct Ukf {
    pub x: DVector<f64>,
    pub p: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub params: SigmaParams,
    k: usize,
}

impl Ukf {
    pub fn new(x0: DVector<f64>, p0: DMatrix<f64>, q: DMatrix<f64>, r: DMatrix<f64>, params: SigmaParams) -> Self {
        Self { x: x0, p: p0, q, r, params, k: 0 }
    }
}

impl Filter for Ukf {
    fn name(&self) -> &'static str {
        "ukf"
    }
    fn x(&self) -> &DVector<f64> {
        &self.x
    }
    fn covariance(&self) -> DMatrix<f64> {
        self.p.clone()
    }
    fn step(&mut self, sys: &dyn DiscreteSystem, u_prev: &DVector<f64>, u: &DVector<f64>, y: &DVector<f64>) -> Result<(), FilterError> {
        self.k += 1;
        let w = self.params.weights(self.x.len());
        let chol = |p: &DMatrix<f64>, k| {
            symmetrize(p).cholesky().map(|c| c.l()).ok_or(FilterError::CholeskyFailure(k))
        };
        let s = chol(&self.p, self.k)?;
        let pts: Vec<_> = sigma_points(&self.x, &s, w.gamma)
            .iter()
            .map(|p| sys.transition(p, u_prev))
            .collect();
        let xp = weighted_mean(&pts, &w.wm);
        let pp = symmetrize(&(cross_cov(&pts, &xp, &pts, &xp, &w.wc) + &self.q));

        let s = chol(&pp, self.k)?;
        let xs = sigma_points(&xp, &s, w.gamma);
        let ys: Vec<_> = xs.iter().map(|p| sys.measure(p, u)).collect();
        let ym = weighted_mean(&ys, &w.wm);
        let pyy = symmetrize(&(cross_cov(&ys, &ym, &ys, &ym, &w.wc) + &self.r));
        let pxy = cross_cov(&xs, &xp, &ys, &ym, &w.wc);
        let sc = pyy.clone().cholesky().ok_or(FilterError::CholeskyFailure(self.k))?;
        let k = sc.solve(&pxy.transpose()).transpose();
        self.x = xp + &k * (y - ym);
        self.p = symmetrize(&(pp - &k * pyy * k.transpose()));
        check_psd(&self.p, self.k)
    }
}

#[derive(Debug, Clone)]
pub struct SrUkf {
    pub x: DVector<f64>,
    /// Lower-triangular square root of the covariance.
    pub s: DMatrix<f64>,
    sq: DMatrix<f64>,
    sr: DMatrix<f64>,
    pub params: SigmaParams,
    k: usize,
}

impl SrUkf {
    pub fn new(
        x0: DVector<f64>,
        p0: DMatrix<f64>,
        q: DMatrix<f64>,
        r: DMatrix<f64>,
        params: SigmaParams,
    ) -> Result<Self, FilterError> {
        let s = p0.cholesky().ok_or(FilterError::CholeskyFailure(0))?.l();
        Ok(Self { x: x0, s, sq: psd_factor(&q), sr: psd_factor(&r), params, k: 0 })
    }

    /// `S S^T = sum_{i>0} wc_i d_i d_i^T + N N^T + wc_0 d_0 d_0^T`.
    fn sqrt_cov(&self, pts: &[DVector<f64>], mean: &DVector<f64>, noise: &DMatrix<f64>, w: &SigmaWeights) -> Result<DMatrix<f64>, FilterError> {
        let dim = mean.len();
        let cols = pts.len() - 1 + noise.ncols();
        let mut m = DMatrix::zeros(dim, cols);
        let sw = w.wc[1].sqrt();
        for (i, p) in pts.iter().skip(1).enumerate() {
            m.set_column(i, &((p - mean) * sw));
        }
        for j in 0..noise.ncols() {
            m.set_column(pts.len() - 1 + j, &noise.column(j));
        }
        let mut s = tria(&m);
        let d0 = (&pts[0] - mean) * w.wc[0].abs().sqrt();
        cholupdate(&mut s, &d0, w.wc[0].signum()).map_err(|_| FilterError::DowndateFailure(self.k))?;
        Ok(s)
    }
}

impl Filter for SrUkf {
    fn name(&self) -> &'static str {
        "srukf"
    }
    fn x(&self) -> &DVector<f64> {
        &self.x
    }
    fn covariance(&self) -> DMatrix<f64> {
        &self.s * self.s.transpose()
    }
    fn step(&mut self, sys: &dyn DiscreteSystem, u_prev: &DVector<f64>, u: &DVector<f64>, y: &DVector<f64>) -> Result<(), FilterError> {
        self.k += 1;
        let w = self.params.weights(self.x.len());
        let pts: Vec<_> = sigma_points(&self.x, &self.s, w.gamma)
            .iter()
            .map(|p| sys.transition(p, u_prev))
            .collect();
        let xp = weighted_mean(&pts, &w.wm);
        let sp = self.sqrt_cov(&pts, &xp, &self.sq, &w)?;

        let xs = sigma_points(&xp, &sp, w.gamma);
        let ys: Vec<_> = xs.iter().map(|p| sys.measure(p, u)).collect();
        let ym = weighted_mean(&ys, &w.wm);
        let sy = self.sqrt_cov(&ys, &ym, &self.sr, &w)?;
        let pxy = cross_cov(&xs, &xp, &ys, &ym, &w.wc);
        // K = Pxy (Sy Sy^T)^-1 via two triangular solves
        let a = sy
            .solve_lower_triangular(&pxy.transpose())
            .ok_or(FilterError::CholeskyFailure(self.k))?;
        let kt = sy
            .transpose()
            .solve_upper_triangular(&a)
            .ok_or(FilterError::CholeskyFailure(self.k))?;
        let k = kt.transpose();
        self.x = xp + &k * (y - ym);
        let uu = &k * &sy;
        let mut s = sp;
        for j in 0..uu.ncols() {
            cholupdate(&mut s, &uu.column(j).into_owned(), -1.0).map_err(|_| FilterError::DowndateFailure(self.k))?;
        }
        self.s = s;
        Ok(())
    }
}

/// Runs a filter over sampled inputs and measurements. `x_hat[0]` is the
/// initial estimate; `x_hat[k]` uses measurements up to `y[k]`.
pub fn run_filter(
    filter: &mut dyn Filter,
    sys: &dyn DiscreteSystem,
    u: &[DVector<f64>],
    y: &[DVector<f64>],
) -> Result<Vec<DVector<f64>>, FilterError> {
    if u.len() != y.len() {
        return Err(FilterError::Dimension("u and y lengths differ".into()));
    }
    let mut out = Vec::with_capacity(y.len());
    out.push(filter.x().clone());
    for k in 1..y.len() {
        filter.step(sys, &u[k - 1], &u[k], &y[k])?;
        out.push(filter.x().clone());
    }
    Ok(out)
}

// ---------------------------------------------------------------- noise

/// Noise distribution for one channel group; `seed` selects the stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum NoiseKind {
    None,
    /// Zero-mean Gaussian. Without `cov`, per-channel standard deviations
    /// are `std_fraction` times the range of the noise-free signal.
    Gaussian {
        #[serde(default)]
        cov: Option<Vec<Vec<f64>>>,
        #[serde(default = "default_std_fraction")]
        std_fraction: f64,
    },
    Laplace { m: f64, s: f64 },
    Cauchy { a: f64, b: f64 },
}

fn default_std_fraction() -> f64 {
    0.05
}

impl Default for NoiseKind {
    fn default() -> Self {
        NoiseKind::None
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct NoiseSpec {
    #[serde(flatten)]
    pub kind: NoiseKind,
    #[serde(default)]
    pub seed: Option<u64>,
    /// Covariance handed to the filters for this channel group; by default
    /// the true one (Cauchy gets `b^2 I`).
    #[serde(default)]
    pub filter_cov: Option<Vec<Vec<f64>>>,
}

/// Ready-to-sample distribution.
#[derive(Debug, Clone, PartialEq)]
pub enum Noise {
    None,
    /// Lower Cholesky factor of the covariance.
    Gaussian(DMatrix<f64>),
    Laplace { m: f64, s: f64 },
    Cauchy { a: f64, b: f64 },
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NoiseError {
    #[error("covariance is not positive semidefinite")]
    NotPsd,
    #[error("scale parameter must be positive")]
    BadScale,
    #[error("covariance must be {0}x{0}")]
    Dimension(usize),
}

impl NoiseSpec {
    /// Resolves the distribution for `dim` channels; `ranges` are the
    /// per-channel ranges of the noise-free signal.
    pub fn resolve(&self, dim: usize, ranges: &[f64]) -> Result<Noise, NoiseError> {
        match &self.kind {
            NoiseKind::None => Ok(Noise::None),
            NoiseKind::Laplace { m, s } => {
                if !(*s > 0.0) {
                    return Err(NoiseError::BadScale);
                }
                Ok(Noise::Laplace { m: *m, s: *s })
            }
            NoiseKind::Cauchy { a, b } => {
                if !(*b > 0.0) {
                    return Err(NoiseError::BadScale);
                }
                Ok(Noise::Cauchy { a: *a, b: *b })
            }
            NoiseKind::Gaussian { cov, std_fraction } => {
                let c = match cov {
                    Some(c) => {
                        let m = crate::util::from_rows(c).ok_or(NoiseError::Dimension(dim))?;
                        if m.nrows() != dim || m.ncols() != dim {
                            return Err(NoiseError::Dimension(dim));
                        }
                        m
                    }
                    None => DMatrix::from_diagonal(&DVector::from_iterator(
                        dim,
                        (0..dim).map(|i| (std_fraction * ranges.get(i).copied().unwrap_or(0.0)).powi(2)),
                    )),
                };
                if (&c - c.transpose()).amax() > 1e-12 * c.amax().max(1.0) {
                    return Err(NoiseError::NotPsd);
                }
                if c.clone().symmetric_eigen().eigenvalues.min() < -1e-12 * c.amax().max(1.0) {
                    return Err(NoiseError::NotPsd);
                }
                Ok(Noise::Gaussian(psd_factor(&c)))
            }
        }
    }

    /// Covariance the filters assume for this group.
    pub fn filter_covariance(&self, noise: &Noise, dim: usize) -> DMatrix<f64> {
        if let Some(c) = self.filter_cov.as_ref().and_then(|c| crate::util::from_rows(c)) {
            if c.nrows() == dim && c.ncols() == dim {
                return c;
            }
        }
        noise.covariance(dim)
    }
}

impl Noise {
    /// Covariance (finite stand-in `b^2 I` for Cauchy).
    pub fn covariance(&self, dim: usize) -> DMatrix<f64> {
        let eye = DMatrix::identity(dim, dim);
        match self {
            Noise::None => DMatrix::zeros(dim, dim),
            Noise::Gaussian(l) => l * l.transpose(),
            Noise::Laplace { s, .. } => eye * (2.0 * s * s),
            Noise::Cauchy { b, .. } => eye * (b * b),
        }
    }
}

pub fn laplace_from_uniform(m: f64, s: f64, r1: f64) -> f64 {
    m - s * r1.signum() * (1.0 - 2.0 * r1.abs()).ln()
}

pub fn cauchy_from_uniform(a: f64, b: f64, r2: f64) -> f64 {
    a + b * (PI * (r2 - 0.5)).tan()
}

/// Uniform on the open interval (0, 1).
fn open_unit<R: Rng>(rng: &mut R) -> f64 {
    loop {
        let v: f64 = rng.random();
        if v > 0.0 {
            return v;
        }
    }
}

/// `n` independent `dim`-vectors.
pub fn sample_noise<R: Rng>(noise: &Noise, dim: usize, n: usize, rng: &mut R) -> Vec<DVector<f64>> {
    (0..n)
        .map(|_| match noise {
            Noise::None => DVector::zeros(dim),
            Noise::Gaussian(l) => l * DVector::from_fn(dim, |_, _| rng.sample::<f64, _>(StandardNormal)),
            Noise::Laplace { m, s } => DVector::from_fn(dim, |_, _| laplace_from_uniform(*m, *s, open_unit(rng) - 0.5)),
            Noise::Cauchy { a, b } => DVector::from_fn(dim, |_, _| cauchy_from_uniform(*a, *b, open_unit(rng))),
        })
        .collect()
}
