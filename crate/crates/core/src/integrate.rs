//! Dormand-Prince 5(4) integration with PI step control and dense output,
//! plus sampled input signals.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IntegrateError {
    #[error("step size underflow at t = {t} (h = {h:e})")]
    StepSizeUnderflow { t: f64, h: f64 },
    #[error("non-finite state or derivative at t = {t}")]
    NonFiniteState { t: f64 },
    #[error("t = {t} outside [{lo}, {hi}]")]
    OutOfRange { t: f64, lo: f64, hi: f64 },
    #[error("invalid integration setup: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    pub rel: f64,
    pub abs: f64,
}

impl Default for Tolerances {
    /// The usual ode45 defaults.
    fn default() -> Self {
        Self { rel: 1e-3, abs: 1e-6 }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IntegratorStats {
    pub steps: usize,
    pub rejections: usize,
    pub evaluations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<DVector<f64>>,
    pub stats: IntegratorStats,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn last(&self) -> Option<&DVector<f64>> {
        self.states.last()
    }
}

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;
// dense output
const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

const SAFETY: f64 = 0.9;
const FAC_MIN: f64 = 0.2;
const FAC_MAX: f64 = 10.0;
const BETA: f64 = 0.04;

struct StepRecord {
    t: f64,
    h: f64,
    x0: DVector<f64>,
    // k1, k3..k7; k2 has a zero weight in both the solution and interpolant
    stages: [DVector<f64>; 6],
}

/// `x + h * sum(c_i k_i)` with one allocation.
fn combo(x: &DVector<f64>, h: f64, terms: &[(&DVector<f64>, f64)]) -> DVector<f64> {
    let mut out = x.clone();
    for (k, c) in terms {
        out.axpy(h * c, k, 1.0);
    }
    out
}

/// Stateful Dormand-Prince stepper. The right-hand side may change between
/// calls to [`DormandPrince::advance_exact`] (zero-order-hold inputs); call
/// [`DormandPrince::reset_fsal`] when it does.
pub struct DormandPrince<F> {
    f: F,
    t: f64,
    x: DVector<f64>,
    k1: Option<DVector<f64>>,
    h: f64,
    err_old: f64,
    tol: Tolerances,
    h_min: f64,
    // interpolation data for the last accepted step
    dense: Option<StepRecord>,
    pub stats: IntegratorStats,
}

impl<F> DormandPrince<F>
where
    F: FnMut(f64, &DVector<f64>) -> DVector<f64>,
{
    /// `span` is the length of the full integration interval; it sets the
    /// underflow threshold `1e-14 * span`.
    pub fn new(f: F, t0: f64, x0: DVector<f64>, tol: Tolerances, span: f64) -> Result<Self, IntegrateError> {
        if !(tol.rel > 0.0 && tol.abs > 0.0) {
            return Err(IntegrateError::Invalid("tolerances must be positive".into()));
        }
        if !(span > 0.0) {
            return Err(IntegrateError::Invalid("empty time span".into()));
        }
        if x0.iter().any(|v| !v.is_finite()) {
            return Err(IntegrateError::NonFiniteState { t: t0 });
        }
        Ok(Self {
            f,
            t: t0,
            x: x0,
            k1: None,
            h: 0.0,
            err_old: 1e-4,
            tol,
            h_min: 1e-14 * span,
            dense: None,
            stats: IntegratorStats::default(),
        })
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn state(&self) -> &DVector<f64> {
        &self.x
    }

    pub fn reset_fsal(&mut self) {
        self.k1 = None;
    }

    /// Adds `delta` to the cached derivative at the current time instead of
    /// re-evaluating. Exact when the right-hand side just changed by a known
    /// additive term. Without a cached derivative this is a no-op.
    pub fn shift_fsal(&mut self, delta: &DVector<f64>) {
        if let Some(k1) = &mut self.k1 {
            *k1 += delta;
        }
    }

    fn eval(&mut self, t: f64, x: &DVector<f64>) -> Result<DVector<f64>, IntegrateError> {
        self.stats.evaluations += 1;
        let d = (self.f)(t, x);
        if d.iter().any(|v| !v.is_finite()) {
            return Err(IntegrateError::NonFiniteState { t });
        }
        Ok(d)
    }

    fn scale(&self, a: &DVector<f64>, b: &DVector<f64>) -> DVector<f64> {
        a.zip_map(b, |p, q| self.tol.abs + self.tol.rel * p.abs().max(q.abs()))
    }

    fn initial_step(&mut self, k1: &DVector<f64>, limit: f64) -> Result<f64, IntegrateError> {
        let sc = self.scale(&self.x, &self.x);
        let n = self.x.len().max(1) as f64;
        let d0 = (self.x.component_div(&sc).norm_squared() / n).sqrt();
        let d1 = (k1.component_div(&sc).norm_squared() / n).sqrt();
        let h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
        let h0 = h0.min(limit);
        let x1 = &self.x + k1 * h0;
        let k2 = self.eval(self.t + h0, &x1)?;
        let d2 = ((&k2 - k1).component_div(&sc).norm_squared() / n).sqrt() / h0;
        if d1.max(d2) <= 1e-15 {
            // stationary start: try the whole interval, the error test decides
            return Ok(limit);
        }
        let h1 = (0.01 / d1.max(d2)).powf(0.2);
        Ok((100.0 * h0).min(h1).min(limit))
    }

    /// Advances by one accepted step of at most `h_max`.
    fn step(&mut self, h_max: f64) -> Result<(), IntegrateError> {
        let k1 = match self.k1.take() {
            Some(k) => k,
            None => {
                let x = self.x.clone();
                self.eval(self.t, &x)?
            }
        };
        if self.h <= 0.0 {
            self.h = self.initial_step(&k1, h_max)?;
        }
        let mut h = self.h.min(h_max);
        loop {
            if h < self.h_min {
                return Err(IntegrateError::StepSizeUnderflow { t: self.t, h });
            }
            let t = self.t;
            let x = &self.x;
            let x2 = combo(x, h, &[(&k1, A21)]);
            let k2 = self.eval(t + C2 * h, &x2)?;
            let x3 = combo(&self.x, h, &[(&k1, A31), (&k2, A32)]);
            let k3 = self.eval(t + C3 * h, &x3)?;
            let x4 = combo(&self.x, h, &[(&k1, A41), (&k2, A42), (&k3, A43)]);
            let k4 = self.eval(t + C4 * h, &x4)?;
            let x5 = combo(&self.x, h, &[(&k1, A51), (&k2, A52), (&k3, A53), (&k4, A54)]);
            let k5 = self.eval(t + C5 * h, &x5)?;
            let x6 = combo(&self.x, h, &[(&k1, A61), (&k2, A62), (&k3, A63), (&k4, A64), (&k5, A65)]);
            let k6 = self.eval(t + h, &x6)?;
            let x1 = combo(&self.x, h, &[(&k1, A71), (&k3, A73), (&k4, A74), (&k5, A75), (&k6, A76)]);
            let k7 = self.eval(t + h, &x1)?;
            let x = &self.x;
            let n = x.len().max(1) as f64;
            let mut acc = 0.0;
            for i in 0..x.len() {
                let e = h * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
                let sc = self.tol.abs + self.tol.rel * x[i].abs().max(x1[i].abs());
                acc += (e / sc).powi(2);
            }
            let err = (acc / n).sqrt();
            if err <= 1.0 {
                let fac = SAFETY * err.max(1e-10).powf(-(0.2 - 0.75 * BETA)) * self.err_old.powf(BETA);
                let h_next = h * fac.clamp(FAC_MIN, FAC_MAX);
                self.err_old = err.max(1e-4);
                let x0 = std::mem::replace(&mut self.x, x1);
                self.k1 = Some(k7.clone());
                self.dense = Some(StepRecord { t, h, x0, stages: [k1, k3, k4, k5, k6, k7] });
                self.t = t + h;
                self.h = h_next;
                self.stats.steps += 1;
                return Ok(());
            }
            self.stats.rejections += 1;
            h *= (SAFETY * err.powf(-0.2)).max(FAC_MIN);
        }
    }

    /// Integrates up to exactly `t_end`, never stepping past it.
    pub fn advance_exact(&mut self, t_end: f64) -> Result<&DVector<f64>, IntegrateError> {
        while t_end - self.t > 1e-12 * t_end.abs().max(1.0) {
            let remaining = t_end - self.t;
            let before = self.h;
            self.step(remaining)?;
            if (t_end - self.t).abs() <= 1e-12 * t_end.abs().max(1.0) {
                self.t = t_end;
                // a clipped step says nothing about the natural step size
                if before > remaining {
                    self.h = self.h.max(before);
                }
            }
        }
        Ok(&self.x)
    }

    /// Integrates until the last accepted step covers `t_out` and returns the
    /// interpolated state there.
    pub fn advance_dense(&mut self, t_out: f64, t_limit: f64) -> Result<DVector<f64>, IntegrateError> {
        while self.t < t_out {
            let cap = t_limit - self.t;
            self.step(cap)?;
        }
        self.dense_at(t_out).ok_or(IntegrateError::OutOfRange {
            t: t_out,
            lo: self.t,
            hi: self.t,
        })
    }

    /// Fourth-order interpolant over the last accepted step.
    pub fn dense_at(&self, t: f64) -> Option<DVector<f64>> {
        let rec = self.dense.as_ref()?;
        let (t0, h) = (rec.t, rec.h);
        if t < t0 - 1e-12 || t > t0 + h + 1e-12 {
            return None;
        }
        let [k1, k3, k4, k5, k6, k7] = &rec.stages;
        let ydiff = combo(&DVector::zeros(k1.len()), h, &[(k1, A71), (k3, A73), (k4, A74), (k5, A75), (k6, A76)]);
        let bspl = k1 * h - &ydiff;
        let r4 = &ydiff - k7 * h - &bspl;
        let r5 = (k1 * D1 + k3 * D3 + k4 * D4 + k5 * D5 + k6 * D6 + k7 * D7) * h;
        let th = (t - t0) / h;
        let th1 = 1.0 - th;
        Some(&rec.x0 + (&ydiff + (&bspl + (&r4 + &r5 * th1) * th) * th1) * th)
    }
}

/// How a trajectory is recorded.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Output {
    /// Every accepted step.
    Steps,
    /// A uniform grid; steps are clipped to land on it.
    Grid(f64),
    /// A uniform grid filled from the dense interpolant.
    Dense(f64),
}

pub fn integrate_adaptive<F>(
    rhs: F,
    x0: DVector<f64>,
    t_span: (f64, f64),
    tol: Tolerances,
    output: Output,
) -> Result<Trajectory, IntegrateError>
where
    F: FnMut(f64, &DVector<f64>) -> DVector<f64>,
{
    let (t0, tf) = t_span;
    if !(tf > t0) {
        return Err(IntegrateError::Invalid(format!("t_span ({t0}, {tf})")));
    }
    let mut dp = DormandPrince::new(rhs, t0, x0.clone(), tol, tf - t0)?;
    let mut times = vec![t0];
    let mut states = vec![x0];
    match output {
        Output::Steps => {
            while dp.t() < tf {
                let cap = tf - dp.t();
                dp.step(cap)?;
                if (tf - dp.t).abs() <= 1e-12 * tf.abs().max(1.0) {
                    dp.t = tf;
                }
                times.push(dp.t());
                states.push(dp.state().clone());
            }
        }
        Output::Grid(dt) | Output::Dense(dt) => {
            if !(dt > 0.0) {
                return Err(IntegrateError::Invalid("output spacing must be positive".into()));
            }
            let n = ((tf - t0) / dt + 1e-9).floor() as usize;
            for i in 1..=n {
                let t = if i == n && ((tf - t0) / dt - n as f64).abs() < 1e-9 {
                    tf
                } else {
                    t0 + i as f64 * dt
                };
                let x = match output {
                    Output::Grid(_) => dp.advance_exact(t)?.clone(),
                    _ => dp.advance_dense(t, tf)?,
                };
                times.push(t);
                states.push(x);
            }
        }
    }
    Ok(Trajectory { times, states, stats: dp.stats })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Interpolation {
    Hold,
    #[default]
    Linear,
}

/// Uniformly sampled vector signal.
#[derive(Debug, Clone, PartialEq)]
pub struct InputSignal {
    pub t0: f64,
    pub dt: f64,
    pub samples: Vec<DVector<f64>>,
    pub interpolation: Interpolation,
}

impl InputSignal {
    pub fn new(t0: f64, dt: f64, samples: Vec<DVector<f64>>, interpolation: Interpolation) -> Result<Self, IntegrateError> {
        if samples.is_empty() || !(dt > 0.0) {
            return Err(IntegrateError::Invalid("signal needs samples and positive spacing".into()));
        }
        Ok(Self { t0, dt, samples, interpolation })
    }

    pub fn t_end(&self) -> f64 {
        self.t0 + (self.samples.len() - 1) as f64 * self.dt
    }

    pub fn sample_time(&self, i: usize) -> f64 {
        self.t0 + i as f64 * self.dt
    }

    /// Index of the frame containing `t` (the last sample at or before it).
    pub fn frame(&self, t: f64) -> usize {
        let s = ((t - self.t0) / self.dt + 1e-9).floor();
        (s.max(0.0) as usize).min(self.samples.len() - 1)
    }

    pub fn eval(&self, t: f64) -> Result<DVector<f64>, IntegrateError> {
        let hi = self.t_end();
        let slack = 1e-9 * self.dt;
        if t < self.t0 - slack || t > hi + slack {
            return Err(IntegrateError::OutOfRange { t, lo: self.t0, hi });
        }
        let i = self.frame(t);
        match self.interpolation {
            Interpolation::Hold => Ok(self.samples[i].clone()),
            Interpolation::Linear => {
                if i + 1 >= self.samples.len() {
                    return Ok(self.samples[i].clone());
                }
                let th = ((t - self.sample_time(i)) / self.dt).clamp(0.0, 1.0);
                Ok(&self.samples[i] * (1.0 - th) + &self.samples[i + 1] * th)
            }
        }
    }
}
