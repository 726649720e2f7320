//! Scenario runner: plant simulation, estimator runs, metrics and reports.
//!
//! Synthetic scenarios close the generator through a reactance `x_e` onto an
//! infinite bus, which keeps the plant stable and makes the measured
//! currents consistent with the simulated states. CSV scenarios replay
//! recorded currents and unknown inputs open loop.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::{DMatrix, DVector, Matrix3, Vector2, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::estimators::{
    default_p0, discretize_2nd_order, run_filter, run_linf_observer, sample_noise, Ekf, Filter, FilterError, Noise,
    NoiseError, NoiseSpec, ObserverOptions, SigmaParams, SrUkf, Ukf,
};
use crate::integrate::{DormandPrince, IntegrateError, Interpolation, InputSignal, Tolerances};
use crate::lipschitz::{compose_gamma_l, estimate_gamma, LipschitzOptions};
use crate::models::{
    default_box4, equilibrium_10th, ExciterParams, GovernorParams, MachineParams, MachineParams10, ModelError,
    OperatingBox, PlantModel,
};
use crate::synthesis::{
    relax_lower, sca_refine, synthesize_upper, DesignRecord, ObserverDesign, SynthesisError, SynthesisInput,
    SynthesisOptions,
};

pub const SCHEMA_VERSION: u32 = 1;
pub const FRAME_RATE: f64 = 60.0;
/// Plot scale factor for `z`; reported, never applied.
pub const PLOT_SCALE: f64 = 5e3;
/// Default observer start offset from the true initial state.
pub const X_HAT_OFFSET: [f64; 4] = [-0.4, 0.0, 0.5, 0.2];

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("io error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Synthesis(#[from] SynthesisError),
    #[error(transparent)]
    Integrate(#[from] IntegrateError),
    #[error("{estimator}: {source}")]
    Filter { estimator: String, source: FilterError },
    #[error(transparent)]
    Noise(#[from] NoiseError),
    #[error("trajectories are on different grids")]
    GridMismatch,
    #[error("overlapping edits on channel {0}")]
    Overlap(usize),
    #[error("equilibrium search did not converge")]
    NoEquilibrium,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io { path: path.to_path_buf(), source }
}

// ---------------------------------------------------------------- config

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelOrder {
    Order4,
    Order10,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EstimatorKind {
    Observer,
    Ekf,
    Ukf,
    Srukf,
}

impl EstimatorKind {
    pub const ALL: [EstimatorKind; 4] = [Self::Observer, Self::Ekf, Self::Ukf, Self::Srukf];

    pub fn name(self) -> &'static str {
        match self {
            Self::Observer => "observer",
            Self::Ekf => "ekf",
            Self::Ukf => "ukf",
            Self::Srukf => "srukf",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s.trim().to_ascii_lowercase())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EditKind {
    Step,
    Ramp,
}

/// Additive change to one unknown-input channel (1 or 2).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Edit {
    pub channel: usize,
    pub t_start: f64,
    pub t_end: f64,
    pub kind: EditKind,
    pub magnitude: f64,
}

/// Steady unknown inputs plus a decaying oscillation after a fault.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    /// Steady `[T_m, E_fd]`.
    pub steady: [f64; 2],
    pub amplitude: [f64; 2],
    /// Decay rate of the oscillation envelope, 1/s.
    pub decay: f64,
    pub freq_hz: f64,
    pub fault_time: f64,
    /// Infinite-bus voltage and tie reactance.
    pub v_inf: f64,
    pub x_e: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            steady: [0.79, 1.88],
            amplitude: [0.05, 0.1],
            decay: 0.5,
            freq_hz: 1.0,
            fault_time: 1.0,
            v_inf: 1.0,
            x_e: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "lowercase")]
pub enum InputSource {
    Synthetic(SyntheticSpec),
    /// Columns `t,i_R,i_I,T_m,E_fd` at 60 Hz.
    Csv { path: PathBuf },
}

impl Default for InputSource {
    fn default() -> Self {
        InputSource::Synthetic(SyntheticSpec::default())
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseConfig {
    pub process: NoiseSpec,
    pub measurement: NoiseSpec,
}

/// Which linear part the certificate is built on. The observer's runtime
/// vector field `A x + f(x, u)` is the same either way.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ASplit {
    /// `A` from the parameterized model.
    Structural,
    /// `A` = state Jacobian at the operating point, `f` the remainder.
    Jacobian,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthesisConfig {
    pub a_split: ASplit,
    pub gamma_f: f64,
    pub gamma_l: f64,
    /// Replace the constants above by sampled estimates over the box.
    pub estimate_gamma: bool,
    /// `Z = z I`.
    pub z: f64,
    pub nu4: f64,
    pub nu2: f64,
    /// `C` is this factor times the output Jacobian at the initial point.
    pub c_scale: f64,
    pub sca_rounds: usize,
    /// Also compute the relaxation lower bound.
    pub lower_bound: bool,
    /// Load the gain from a design file instead of synthesizing.
    pub design: Option<PathBuf>,
}

impl Default for SynthesisConfig {
    fn default() -> Self {
        Self {
            a_split: ASplit::Jacobian,
            gamma_f: 0.1,
            gamma_l: 0.05,
            estimate_gamma: false,
            z: 2e-4,
            nu4: 1.0,
            nu2: 50.0,
            c_scale: 1.0,
            sca_rounds: 0,
            lower_bound: false,
            design: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterConfig {
    pub sigma: SigmaParams,
    /// Added to the filter covariances to keep them positive definite.
    pub q_floor: f64,
    pub r_floor: f64,
    /// Diagonal of the initial covariance; a state-scaled default otherwise.
    pub p0_diag: Option<Vec<f64>>,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self { sigma: SigmaParams::default(), q_floor: 1e-10, r_floor: 1e-8, p0_diag: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub schema_version: u32,
    pub case: String,
    pub model: ModelOrder,
    pub machine: MachineParams,
    pub exciter: ExciterParams,
    pub governor: GovernorParams,
    #[serde(rename = "box")]
    pub op_box: Option<OperatingBox>,
    pub noise: NoiseConfig,
    pub inputs: InputSource,
    /// Nominal unknown-input guess; defaults to the steady inputs.
    pub r: Option<[f64; 2]>,
    pub x0: Option<Vec<f64>>,
    pub x_hat0: Option<Vec<f64>>,
    pub t_span: f64,
    pub uncertainty: f64,
    pub edits: Vec<Edit>,
    pub estimators: Vec<EstimatorKind>,
    pub seed: u64,
    pub synthesis: SynthesisConfig,
    pub filter: FilterConfig,
    pub observer: ObserverOptions,
    /// Plant integration tolerances.
    pub plant_tol: Tolerances,
    pub stg_window: [f64; 2],
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            case: "case".into(),
            model: ModelOrder::Order4,
            machine: MachineParams::default(),
            exciter: ExciterParams::default(),
            governor: GovernorParams::default(),
            op_box: None,
            noise: NoiseConfig::default(),
            inputs: InputSource::default(),
            r: None,
            x0: None,
            x_hat0: None,
            t_span: 15.0,
            uncertainty: 0.0,
            edits: Vec::new(),
            estimators: EstimatorKind::ALL.to_vec(),
            seed: 0,
            synthesis: SynthesisConfig::default(),
            filter: FilterConfig::default(),
            observer: ObserverOptions::default(),
            plant_tol: Tolerances { rel: 1e-6, abs: 1e-9 },
            stg_window: [10.0, 15.0],
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |s: String| Err(HarnessError::Config(s));
        if self.schema_version != SCHEMA_VERSION {
            return bad(format!("schema_version {} (expected {SCHEMA_VERSION})", self.schema_version));
        }
        if !(0.0..=1.0).contains(&self.uncertainty) {
            return bad(format!("uncertainty {} outside [0, 1]", self.uncertainty));
        }
        if let Some(d) = &self.filter.p0_diag {
            if d.iter().any(|v| !(*v > 0.0)) {
                return bad("p0_diag entries must be positive".into());
            }
        }
        if !(self.t_span > 0.0) {
            return bad("t_span must be positive".into());
        }
        if self.estimators.is_empty() {
            return bad("no estimators requested".into());
        }
        for e in &self.edits {
            if e.channel != 1 && e.channel != 2 {
                return bad(format!("edit channel {} (must be 1 or 2)", e.channel));
            }
            if !(e.t_end > e.t_start) || e.t_start < 0.0 || e.t_end > self.t_span + 1e-9 {
                return bad(format!("edit window [{}, {}] outside the span", e.t_start, e.t_end));
            }
        }
        let [a, b] = self.stg_window;
        if !(b > a) {
            return bad("empty STG window".into());
        }
        Ok(())
    }

    /// Reads a config; relative paths inside it resolve against its folder.
    pub fn load(path: &Path) -> Result<Vec<ScenarioConfig>, HarnessError> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        let value: serde_json::Value = serde_json::from_str(&text)?;
        let mut cfgs: Vec<ScenarioConfig> = match value {
            serde_json::Value::Array(_) => serde_json::from_value(value)?,
            serde_json::Value::Object(ref m) if m.contains_key("cases") => {
                serde_json::from_value(m["cases"].clone())?
            }
            _ => vec![serde_json::from_value(value)?],
        };
        let base = path.parent().unwrap_or(Path::new("."));
        for c in &mut cfgs {
            if let InputSource::Csv { path } = &mut c.inputs {
                if path.is_relative() {
                    *path = base.join(&*path);
                }
            }
            if let Some(d) = &mut c.synthesis.design {
                if d.is_relative() {
                    *d = base.join(&*d);
                }
            }
            c.validate()?;
        }
        Ok(cfgs)
    }

    pub fn hash(&self) -> String {
        let s = serde_json::to_string(self).expect("config serializes");
        let d = Sha256::digest(s.as_bytes());
        d.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    fn params10(&self) -> MachineParams10 {
        MachineParams10 {
            machine: self.machine.clone(),
            exciter: self.exciter.clone(),
            governor: self.governor.clone(),
        }
    }

    pub fn nominal_model(&self) -> Result<PlantModel, HarnessError> {
        Ok(match self.model {
            ModelOrder::Order4 => PlantModel::order4(&self.machine)?,
            ModelOrder::Order10 => PlantModel::order10(&self.params10())?,
        })
    }
}

// ---------------------------------------------------------------- metrics

/// Sum over states of the per-state root-mean-square error.
pub fn rmse(x: &[DVector<f64>], x_hat: &[DVector<f64>]) -> Result<f64, HarnessError> {
    if x.len() != x_hat.len() || x.is_empty() || x.iter().zip(x_hat).any(|(a, b)| a.len() != b.len()) {
        return Err(HarnessError::GridMismatch);
    }
    let n = x[0].len();
    let tf = x.len() as f64;
    Ok((0..n)
        .map(|i| (x.iter().zip(x_hat).map(|(a, b)| (a[i] - b[i]).powi(2)).sum::<f64>() / tf).sqrt())
        .sum())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StgVerdict {
    pub pass: bool,
    /// `max z / (mu w)`.
    pub margin: f64,
    pub max_z: f64,
    pub bound: f64,
}

pub fn stg_check(times: &[f64], z: &[f64], mu_bar: f64, w_inf: f64, window: (f64, f64)) -> StgVerdict {
    let max_z = times
        .iter()
        .zip(z)
        .filter(|(t, _)| **t >= window.0 - 1e-9 && **t <= window.1 + 1e-9)
        .map(|(_, v)| *v)
        .fold(0.0, f64::max);
    let bound = mu_bar * w_inf;
    let margin = if max_z == 0.0 { 0.0 } else if bound > 0.0 { max_z / bound } else { f64::INFINITY };
    StgVerdict { pass: max_z <= bound, margin, max_z, bound }
}

/// `max_t ||q(t) - r||_2`.
pub fn w_linf(q: &[Vector2<f64>], r: &Vector2<f64>) -> f64 {
    q.iter().map(|v| (v - r).norm()).fold(0.0, f64::max)
}

pub fn apply_edits(times: &[f64], q: &[Vector2<f64>], edits: &[Edit]) -> Result<Vec<Vector2<f64>>, HarnessError> {
    for (i, a) in edits.iter().enumerate() {
        if a.channel != 1 && a.channel != 2 {
            return Err(HarnessError::Config(format!("edit channel {}", a.channel)));
        }
        for b in &edits[i + 1..] {
            if a.channel == b.channel && a.t_start < b.t_end && b.t_start < a.t_end {
                return Err(HarnessError::Overlap(a.channel));
            }
        }
    }
    let mut out = q.to_vec();
    for (t, v) in times.iter().zip(out.iter_mut()) {
        for e in edits {
            let c = e.channel - 1;
            match e.kind {
                EditKind::Step if *t >= e.t_start && *t <= e.t_end => v[c] += e.magnitude,
                EditKind::Ramp if *t >= e.t_start => {
                    let frac = ((t - e.t_start) / (e.t_end - e.t_start)).min(1.0);
                    v[c] += e.magnitude * frac;
                }
                _ => {}
            }
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------- inputs

pub fn frame_times(t_span: f64) -> Vec<f64> {
    let n = (t_span * FRAME_RATE).round() as usize;
    (0..=n).map(|k| k as f64 / FRAME_RATE).collect()
}

/// Unknown inputs `steady + A exp(-decay s) (sin(2 pi f s + phi) - sin phi)`
/// for `s = t - t_fault > 0`, with a seeded phase per channel.
pub fn synth_q(spec: &SyntheticSpec, steady: [f64; 2], seed: u64, times: &[f64]) -> Vec<Vector2<f64>> {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(3);
    let phase: [f64; 2] = [rng.random_range(0.0..std::f64::consts::TAU), rng.random_range(0.0..std::f64::consts::TAU)];
    let w = std::f64::consts::TAU * spec.freq_hz;
    times
        .iter()
        .map(|t| {
            let s = t - spec.fault_time;
            Vector2::from_fn(|i, _| {
                if s <= 0.0 {
                    steady[i]
                } else {
                    steady[i] + spec.amplitude[i] * (-spec.decay * s).exp() * ((w * s + phase[i]).sin() - phase[i].sin())
                }
            })
        })
        .collect()
}

/// Currents and unknown inputs of a noise-free 4th-order machine on the
/// infinite bus, on the 60 Hz grid.
pub fn synth_inputs(
    spec: &SyntheticSpec,
    machine: &MachineParams,
    seed: u64,
    t_span: f64,
) -> Result<(Vec<f64>, Vec<Vector2<f64>>, Vec<Vector2<f64>>), HarnessError> {
    let plant = PlantModel::order4(machine)?;
    let bus = InfiniteBus { v_inf: spec.v_inf, x_e: spec.x_e };
    let times = frame_times(t_span);
    let q = synth_q(spec, spec.steady, seed, &times);
    let x0 = bus_equilibrium4(&plant, &bus, &Vector2::new(spec.steady[0], spec.steady[1]))?;
    let zeros = vec![DVector::zeros(4); times.len()];
    let tol = Tolerances { rel: 1e-6, abs: 1e-9 };
    let (_, u) = simulate_plant(&plant, &x0, &times, &q, Currents::Bus(bus), &zeros, tol)?;
    Ok((times, u, q))
}

/// Trajectory CSV row.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InputRow {
    pub t: f64,
    #[serde(rename = "i_R")]
    pub i_r: f64,
    #[serde(rename = "i_I")]
    pub i_i: f64,
    #[serde(rename = "T_m")]
    pub t_m: f64,
    #[serde(rename = "E_fd")]
    pub e_fd: f64,
}

pub fn read_inputs_csv(path: &Path) -> Result<Vec<InputRow>, HarnessError> {
    let mut rd = csv::Reader::from_path(path)?;
    let rows = rd.deserialize().collect::<Result<Vec<InputRow>, _>>()?;
    if rows.len() < 2 {
        return Err(HarnessError::Config(format!("{}: need at least two rows", path.display())));
    }
    let dt = 1.0 / FRAME_RATE;
    for (k, r) in rows.iter().enumerate() {
        if (r.t - rows[0].t - k as f64 * dt).abs() > 1e-6 {
            return Err(HarnessError::Config(format!("{}: row {} is off the 60 Hz grid", path.display(), k + 1)));
        }
    }
    Ok(rows)
}

pub fn write_inputs_csv(path: &Path, rows: &[InputRow]) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(io_err(path))?;
    Ok(())
}

// ---------------------------------------------------------------- infinite bus

/// Generator tied to an infinite bus: `V = V_inf + j x_e I`, i.e.
/// `y = [V_inf - x_e u2, x_e u1]`. The output is affine in `u`, so the
/// currents follow from a 2x2 solve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InfiniteBus {
    pub v_inf: f64,
    pub x_e: f64,
}

impl InfiniteBus {
    pub fn currents(&self, plant: &PlantModel, x: &DVector<f64>) -> Vector2<f64> {
        let y0 = plant.y(x, &Vector2::zeros());
        let m1 = plant.y(x, &Vector2::new(1.0, 0.0)) - y0;
        let m2 = plant.y(x, &Vector2::new(0.0, 1.0)) - y0;
        // (M + N) u = [V_inf, 0] - y0 with N = [[0, x_e], [-x_e, 0]]
        let a = nalgebra::Matrix2::new(m1[0], m2[0] + self.x_e, m1[1] - self.x_e, m2[1]);
        let b = Vector2::new(self.v_inf - y0[0], -y0[1]);
        a.lu().solve(&b).unwrap_or_else(Vector2::zeros)
    }
}

/// Equilibrium of the 4th-order machine on the bus for unknown inputs
/// `q4 = [T_m, E_fd]`, by Newton on `(delta, e'_q, e'_d)`.
pub fn bus_equilibrium4(plant: &PlantModel, bus: &InfiniteBus, q4: &Vector2<f64>) -> Result<DVector<f64>, HarnessError> {
    let w0 = plant.dp.alpha[0];
    let res = |z: &Vector3<f64>| {
        let x = DVector::from_vec(vec![z[0], w0, z[1], z[2]]);
        let u = bus.currents(plant, &x);
        let d = plant.rhs(&x, &u, q4);
        Vector3::new(d[1], d[2], d[3])
    };
    let mut z = Vector3::new(0.8, 1.0, 0.4);
    for _ in 0..100 {
        let r = res(&z);
        if r.amax() < 1e-12 {
            let x = DVector::from_vec(vec![z[0], w0, z[1], z[2]]);
            return Ok(x);
        }
        let mut j = Matrix3::zeros();
        for k in 0..3 {
            let mut zp = z;
            let h = 1e-7 * (1.0 + z[k].abs());
            zp[k] += h;
            j.set_column(k, &((res(&zp) - r) / h));
        }
        let dz = j.lu().solve(&(-r)).ok_or(HarnessError::NoEquilibrium)?;
        // damped step keeps the angle branch
        let scale = (0.3 / dz.amax()).min(1.0);
        z += dz * scale;
    }
    Err(HarnessError::NoEquilibrium)
}

/// Initial state and steady unknown inputs for the configured model.
fn operating_point(
    cfg: &ScenarioConfig,
    nominal: &PlantModel,
    bus: &InfiniteBus,
    steady: [f64; 2],
) -> Result<(DVector<f64>, Vector2<f64>), HarnessError> {
    let q4 = Vector2::new(steady[0], steady[1]);
    let m4 = PlantModel::order4(&cfg.machine)?;
    let x4 = bus_equilibrium4(&m4, bus, &q4)?;
    match cfg.model {
        ModelOrder::Order4 => Ok((x4, q4)),
        ModelOrder::Order10 => {
            let u = bus.currents(&m4, &x4);
            let x4v = nalgebra::Vector4::new(x4[0], x4[1], x4[2], x4[3]);
            let (x10, q) = equilibrium_10th(&x4v, &u, &q4, &cfg.params10());
            debug_assert_eq!(nominal.n_x, 10);
            Ok((x10, q))
        }
    }
}

// ---------------------------------------------------------------- simulation

#[derive(Debug, Clone, PartialEq)]
pub struct PlantRun {
    pub times: Vec<f64>,
    pub x: Vec<DVector<f64>>,
    pub u: Vec<Vector2<f64>>,
    pub q: Vec<Vector2<f64>>,
    /// Measured output including noise.
    pub y: Vec<DVector<f64>>,
}

enum Currents<'a> {
    Bus(InfiniteBus),
    Replay(&'a InputSignal),
}

/// Frame-by-frame plant integration with frame-constant process noise.
fn simulate_plant(
    plant: &PlantModel,
    x0: &DVector<f64>,
    times: &[f64],
    q: &[Vector2<f64>],
    currents: Currents,
    process: &[DVector<f64>],
    tol: Tolerances,
) -> Result<(Vec<DVector<f64>>, Vec<Vector2<f64>>), HarnessError> {
    let dt = 1.0 / FRAME_RATE;
    let q_sig = InputSignal::new(times[0], dt, q.iter().map(|v| DVector::from_column_slice(v.as_slice())).collect(), Interpolation::Linear)?;
    let frame = std::cell::Cell::new(0usize);
    let current = |t: f64, x: &DVector<f64>| match &currents {
        Currents::Bus(b) => b.currents(plant, x),
        Currents::Replay(s) => {
            let v = s.eval(t.clamp(s.t0, s.t_end())).unwrap_or_else(|_| s.samples[s.frame(t)].clone());
            Vector2::new(v[0], v[1])
        }
    };
    let rhs = |t: f64, x: &DVector<f64>| {
        let qt = q_sig.eval(t.clamp(q_sig.t0, q_sig.t_end())).unwrap_or_else(|_| q_sig.samples[q_sig.frame(t)].clone());
        let u = current(t, x);
        plant.rhs(x, &u, &Vector2::new(qt[0], qt[1])) + &process[frame.get()]
    };
    let tf = *times.last().unwrap();
    let mut dp = DormandPrince::new(rhs, times[0], x0.clone(), tol, tf - times[0])?;
    let mut xs = vec![x0.clone()];
    for k in 1..times.len() {
        frame.set(k - 1);
        dp.reset_fsal();
        xs.push(dp.advance_exact(times[k])?.clone());
    }
    let us = times.iter().zip(&xs).map(|(t, x)| current(*t, x)).collect();
    Ok((xs, us))
}

fn ranges(series: &[DVector<f64>]) -> Vec<f64> {
    let n = series[0].len();
    (0..n)
        .map(|i| {
            let (lo, hi) = series.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v[i]), hi.max(v[i])));
            hi - lo
        })
        .collect()
}

fn stream(seed: u64, spec_seed: Option<u64>, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(spec_seed.unwrap_or(seed));
    rng.set_stream(id);
    rng
}

// ---------------------------------------------------------------- design

#[derive(Debug, Clone, PartialEq)]
pub struct DesignSummary {
    pub design: ObserverDesign,
    pub input: SynthesisInput,
    pub j_lower: Option<f64>,
    pub seconds: f64,
}

/// Builds the synthesis problem for a configuration around `(x0, u0)`.
pub fn synthesis_input(
    cfg: &ScenarioConfig,
    nominal: &PlantModel,
    x0: &DVector<f64>,
    u0: &Vector2<f64>,
) -> Result<(SynthesisInput, DMatrix<f64>), HarnessError> {
    let s = &cfg.synthesis;
    let c = nominal.linearize_output(x0, u0, s.c_scale);
    let model = nominal.clone().with_c(c.clone())?;
    let a = match s.a_split {
        ASplit::Structural => model.a.clone(),
        ASplit::Jacobian => model.jac_x(x0, u0),
    };
    let (mut gamma_f, mut gamma_l) = (s.gamma_f, s.gamma_l);
    if s.estimate_gamma {
        let bx = cfg.op_box.clone().unwrap_or_else(default_box4);
        bx.validate()?;
        if bx.x_min.len() != 4 || a.nrows() != 4 {
            return Err(HarnessError::Config("gamma estimation needs a 4-state box".into()));
        }
        let m4 = PlantModel::order4(&cfg.machine)?.with_c(c.columns(0, 4).into_owned())?;
        let opts = LipschitzOptions { seed: cfg.seed, ..Default::default() };
        let jf = |x: &DVector<f64>, u: &DVector<f64>| m4.jac_x(x, &Vector2::new(u[0], u[1])) - &a;
        gamma_f = estimate_gamma(jf, &bx, &opts).gamma;
        let jh = |x: &DVector<f64>, u: &DVector<f64>| m4.jac_y(x, &Vector2::new(u[0], u[1]));
        gamma_l = compose_gamma_l(estimate_gamma(jh, &bx, &opts).gamma, &m4.c);
    }
    let n = model.n_x;
    Ok((
        SynthesisInput {
            a,
            b_w: model.b_w.clone(),
            c: c.clone(),
            d_w: model.d_w.clone(),
            z: DMatrix::identity(n, n) * s.z,
            gamma_f,
            gamma_l,
            nu4: s.nu4,
            nu2: s.nu2,
        },
        c,
    ))
}

pub fn design_for(cfg: &ScenarioConfig, inp: &SynthesisInput) -> Result<DesignSummary, HarnessError> {
    let start = Instant::now();
    let opts = SynthesisOptions::default();
    if let Some(path) = &cfg.synthesis.design {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        let rec: DesignRecord = serde_json::from_str(&text)?;
        let design = ObserverDesign::from_record(&rec)
            .ok_or_else(|| HarnessError::Config(format!("{}: malformed matrices", path.display())))?;
        if design.l.nrows() != inp.a.nrows() || design.l.ncols() != inp.c.nrows() {
            return Err(HarnessError::Config("design gain does not fit the model".into()));
        }
        return Ok(DesignSummary { design, input: inp.clone(), j_lower: rec.j_lower, seconds: 0.0 });
    }
    let mut design = synthesize_upper(inp, &opts)?;
    if cfg.synthesis.sca_rounds > 0 {
        design = sca_refine(inp, &design, cfg.synthesis.sca_rounds, &opts)?;
    }
    let j_lower = if cfg.synthesis.lower_bound { Some(relax_lower(inp, &opts)?.j_lower) } else { None };
    Ok(DesignSummary { design, input: inp.clone(), j_lower, seconds: start.elapsed().as_secs_f64() })
}

// ---------------------------------------------------------------- case

#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorResult {
    pub kind: EstimatorKind,
    pub x_hat: Vec<DVector<f64>>,
    pub e_norm: Vec<f64>,
    pub z_norm: Vec<f64>,
    pub rmse: f64,
    pub wall_time: f64,
    pub stg: StgVerdict,
    /// Mean `||e||` over the STG window.
    pub mean_e_window: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CaseReport {
    pub config: ScenarioConfig,
    pub config_hash: String,
    pub plant: PlantRun,
    pub r: Vector2<f64>,
    pub mu_bar: f64,
    pub j_bar: f64,
    pub j_lower: Option<f64>,
    pub synthesis_time: f64,
    pub w_linf: f64,
    pub estimators: Vec<EstimatorResult>,
    pub warnings: Vec<String>,
}

impl CaseReport {
    pub fn result(&self, kind: EstimatorKind) -> Option<&EstimatorResult> {
        self.estimators.iter().find(|e| e.kind == kind)
    }
}

/// Runs one scenario end to end.
pub fn run_case(cfg: &ScenarioConfig) -> Result<CaseReport, HarnessError> {
    cfg.validate()?;
    let nominal = cfg.nominal_model()?;
    let n = nominal.n_x;
    let times = frame_times(cfg.t_span);
    let dt = 1.0 / FRAME_RATE;
    let plant_base = nominal.clone();

    // inputs and initial state
    let (x0, q_raw, currents_sig, bus, r_default) = match &cfg.inputs {
        InputSource::Synthetic(spec) => {
            let bus = InfiniteBus { v_inf: spec.v_inf, x_e: spec.x_e };
            let (xeq, q_steady) = operating_point(cfg, &nominal, &bus, spec.steady)?;
            let q = synth_q(spec, [q_steady[0], q_steady[1]], cfg.seed, &times);
            (xeq, q, None, Some(bus), q_steady)
        }
        InputSource::Csv { path } => {
            let rows = read_inputs_csv(path)?;
            let span = rows.last().unwrap().t - rows[0].t;
            if span + 1e-9 < cfg.t_span {
                return Err(HarnessError::Config(format!("{} covers {span} s, need {}", path.display(), cfg.t_span)));
            }
            let rows = &rows[..times.len()];
            let u: Vec<DVector<f64>> = rows.iter().map(|r| DVector::from_vec(vec![r.i_r, r.i_i])).collect();
            let q: Vec<Vector2<f64>> = rows.iter().map(|r| Vector2::new(r.t_m, r.e_fd)).collect();
            let x0 = cfg.x0.clone().map(DVector::from_vec).ok_or_else(|| {
                HarnessError::Config("CSV scenarios need x0".into())
            })?;
            let sig = InputSignal::new(0.0, dt, u, Interpolation::Linear)?;
            (x0, q.clone(), Some(sig), None, q[0])
        }
    };
    let x0 = match &cfg.x0 {
        Some(v) => DVector::from_vec(v.clone()),
        None => x0,
    };
    if x0.len() != n {
        return Err(HarnessError::Config(format!("x0 has {} entries, model has {n}", x0.len())));
    }
    let x_hat0 = match &cfg.x_hat0 {
        Some(v) => DVector::from_vec(v.clone()),
        None => DVector::from_fn(n, |i, _| x0[i] + X_HAT_OFFSET.get(i).copied().unwrap_or(0.0)),
    };
    if x_hat0.len() != n {
        return Err(HarnessError::Config(format!("x_hat0 has {} entries, model has {n}", x_hat0.len())));
    }
    if cfg.filter.p0_diag.as_ref().is_some_and(|d| d.len() != n) {
        return Err(HarnessError::Config(format!("p0_diag must have {n} entries")));
    }
    let mut warnings = Vec::new();
    if let Some(bx) = &cfg.op_box {
        for (name, v) in [("x0", &x0), ("x_hat0", &x_hat0)] {
            if bx.x_min.len() == n && !bx.contains_x(v) {
                warnings.push(format!("{name} lies outside the operating box"));
            }
        }
    }
    let r = cfg.r.map(|v| Vector2::new(v[0], v[1])).unwrap_or(r_default);
    let q = apply_edits(&times, &q_raw, &cfg.edits)?;

    // design, linearized at the initial point
    let u0 = match (&bus, &currents_sig) {
        (Some(b), _) => b.currents(&nominal, &x0),
        (_, Some(s)) => Vector2::new(s.samples[0][0], s.samples[0][1]),
        _ => unreachable!(),
    };
    let (inp, c) = synthesis_input(cfg, &nominal, &x0, &u0)?;
    let observer_model = nominal.clone().with_c(c)?;
    let design = design_for(cfg, &inp)?;

    // plant: noise-free reference for noise scaling, then the noisy run
    let plant = plant_base.with_uncertainty(cfg.uncertainty);
    let currents = || match (&bus, &currents_sig) {
        (Some(b), _) => Currents::Bus(*b),
        (_, Some(s)) => Currents::Replay(s),
        _ => unreachable!(),
    };
    let zeros = vec![DVector::zeros(n); times.len()];
    let (x_ref, u_ref) = simulate_plant(&plant, &x0, &times, &q, currents(), &zeros, cfg.plant_tol)?;
    let y_ref: Vec<DVector<f64>> = x_ref
        .iter()
        .zip(&u_ref)
        .map(|(x, u)| DVector::from_column_slice(plant.y(x, u).as_slice()))
        .collect();
    let p_noise = cfg.noise.process.resolve(n, &ranges(&x_ref))?;
    let m_noise = cfg.noise.measurement.resolve(2, &ranges(&y_ref))?;
    let (x, u) = if p_noise == Noise::None {
        (x_ref, u_ref)
    } else {
        let mut rng = stream(cfg.seed, cfg.noise.process.seed, 1);
        let vp = sample_noise(&p_noise, n, times.len(), &mut rng);
        simulate_plant(&plant, &x0, &times, &q, currents(), &vp, cfg.plant_tol)?
    };
    let mut rng = stream(cfg.seed, cfg.noise.measurement.seed, 2);
    let vm = sample_noise(&m_noise, 2, times.len(), &mut rng);
    let y: Vec<DVector<f64>> = x
        .iter()
        .zip(&u)
        .zip(&vm)
        .map(|((x, u), v)| DVector::from_column_slice(plant.y(x, u).as_slice()) + v)
        .collect();
    let run = PlantRun { times: times.clone(), x, u, q, y };

    // estimators, sequentially on the shared stream
    let u_dv: Vec<DVector<f64>> = run.u.iter().map(|v| DVector::from_column_slice(v.as_slice())).collect();
    let u_sig = InputSignal::new(0.0, dt, u_dv.clone(), Interpolation::Linear)?;
    let y_sig = InputSignal::new(0.0, dt, run.y.clone(), Interpolation::Hold)?;
    let q_filter = cfg.noise.process.filter_covariance(&p_noise, n) * (dt * dt)
        + DMatrix::identity(n, n) * cfg.filter.q_floor;
    let r_filter = cfg.noise.measurement.filter_covariance(&m_noise, 2) + DMatrix::identity(2, 2) * cfg.filter.r_floor;
    let map = discretize_2nd_order(&nominal, &r, dt);
    let w_inf = w_linf(&run.q, &r);
    let window = (cfg.stg_window[0], cfg.stg_window[1]);
    let z = &inp.z;
    let mut results = Vec::new();
    for kind in &cfg.estimators {
        let start = Instant::now();
        let x_hat = match kind {
            EstimatorKind::Observer => {
                run_linf_observer(&observer_model, &design.design.l, &r, x_hat0.clone(), &u_sig, &y_sig, (0.0, cfg.t_span), &cfg.observer)?
                    .states
            }
            _ => {
                let p0 = match &cfg.filter.p0_diag {
                    Some(d) => DMatrix::from_diagonal(&DVector::from_column_slice(d)),
                    None => default_p0(n),
                };
                let mut f: Box<dyn Filter> = match kind {
                    EstimatorKind::Ekf => Box::new(Ekf::new(x_hat0.clone(), p0, q_filter.clone(), r_filter.clone())),
                    EstimatorKind::Ukf => Box::new(Ukf::new(x_hat0.clone(), p0, q_filter.clone(), r_filter.clone(), cfg.filter.sigma)),
                    _ => Box::new(
                        SrUkf::new(x_hat0.clone(), p0, q_filter.clone(), r_filter.clone(), cfg.filter.sigma)
                            .map_err(|source| HarnessError::Filter { estimator: kind.name().into(), source })?,
                    ),
                };
                run_filter(f.as_mut(), &map, &u_dv, &run.y)
                    .map_err(|source| HarnessError::Filter { estimator: kind.name().into(), source })?
            }
        };
        let wall_time = start.elapsed().as_secs_f64();
        if x_hat.len() != run.x.len() {
            return Err(HarnessError::GridMismatch);
        }
        let errs: Vec<DVector<f64>> = run.x.iter().zip(&x_hat).map(|(a, b)| a - b).collect();
        let e_norm: Vec<f64> = errs.iter().map(|e| e.norm()).collect();
        let z_norm: Vec<f64> = errs.iter().map(|e| (z * e).norm()).collect();
        let in_window: Vec<f64> = times
            .iter()
            .zip(&e_norm)
            .filter(|(t, _)| **t >= window.0 - 1e-9 && **t <= window.1 + 1e-9)
            .map(|(_, e)| *e)
            .collect();
        let mean_e_window = if in_window.is_empty() { f64::NAN } else { in_window.iter().sum::<f64>() / in_window.len() as f64 };
        results.push(EstimatorResult {
            kind: *kind,
            rmse: rmse(&run.x, &x_hat)?,
            stg: stg_check(&times, &z_norm, design.design.mu_bar, w_inf, window),
            x_hat,
            e_norm,
            z_norm,
            wall_time,
            mean_e_window,
        });
    }

    Ok(CaseReport {
        config: cfg.clone(),
        config_hash: cfg.hash(),
        plant: run,
        r,
        mu_bar: design.design.mu_bar,
        j_bar: design.design.j_bar,
        j_lower: design.j_lower,
        synthesis_time: design.seconds,
        w_linf: w_inf,
        estimators: results,
        warnings,
    })
}

// ---------------------------------------------------------------- output

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorSummary {
    pub rmse: f64,
    pub wall_time_s: f64,
    pub max_z_window: f64,
    pub stg: bool,
    pub stg_margin: f64,
    pub mean_e_window: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseSummary {
    pub schema_version: u32,
    pub case: String,
    pub seed: u64,
    pub config_hash: String,
    pub mu_bar: f64,
    pub j_bar: f64,
    pub j_lower: Option<f64>,
    pub w_linf: f64,
    pub stg_bound: f64,
    pub plot_scale: f64,
    pub synthesis_time_s: f64,
    pub estimators: std::collections::BTreeMap<String, EstimatorSummary>,
    pub warnings: Vec<String>,
}

impl CaseReport {
    pub fn summary(&self) -> CaseSummary {
        CaseSummary {
            schema_version: SCHEMA_VERSION,
            case: self.config.case.clone(),
            seed: self.config.seed,
            config_hash: self.config_hash.clone(),
            mu_bar: self.mu_bar,
            j_bar: self.j_bar,
            j_lower: self.j_lower,
            w_linf: self.w_linf,
            stg_bound: self.mu_bar * self.w_linf,
            plot_scale: PLOT_SCALE,
            synthesis_time_s: self.synthesis_time,
            estimators: self
                .estimators
                .iter()
                .map(|e| {
                    (
                        e.kind.name().to_string(),
                        EstimatorSummary {
                            rmse: e.rmse,
                            wall_time_s: e.wall_time,
                            max_z_window: e.stg.max_z,
                            stg: e.stg.pass,
                            stg_margin: e.stg.margin,
                            mean_e_window: e.mean_e_window,
                        },
                    )
                })
                .collect(),
            warnings: self.warnings.clone(),
        }
    }

    /// Writes `<dir>/<estimator>.csv`, `inputs.csv` and `summary.json`.
    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>, HarnessError> {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        let mut written = Vec::new();
        let n = self.plant.x[0].len();
        for e in &self.estimators {
            let path = dir.join(format!("{}.csv", e.kind.name()));
            let mut w = csv::Writer::from_path(&path)?;
            let mut header = vec!["t".to_string()];
            header.extend((1..=n).map(|i| format!("x{i}")));
            header.extend((1..=n).map(|i| format!("x{i}_hat")));
            header.push("e_norm".into());
            header.push("z_norm".into());
            w.write_record(&header)?;
            for k in 0..self.plant.times.len() {
                let mut row = vec![self.plant.times[k].to_string()];
                row.extend(self.plant.x[k].iter().map(|v| v.to_string()));
                row.extend(e.x_hat[k].iter().map(|v| v.to_string()));
                row.push(e.e_norm[k].to_string());
                row.push(e.z_norm[k].to_string());
                w.write_record(&row)?;
            }
            w.flush().map_err(io_err(&path))?;
            written.push(path);
        }
        let rows: Vec<InputRow> = (0..self.plant.times.len())
            .map(|k| InputRow {
                t: self.plant.times[k],
                i_r: self.plant.u[k][0],
                i_i: self.plant.u[k][1],
                t_m: self.plant.q[k][0],
                e_fd: self.plant.q[k][1],
            })
            .collect();
        let path = dir.join("inputs.csv");
        write_inputs_csv(&path, &rows)?;
        written.push(path);
        let path = dir.join("summary.json");
        fs::write(&path, serde_json::to_string_pretty(&self.summary())?).map_err(io_err(&path))?;
        written.push(path);
        Ok(written)
    }
}

// ---------------------------------------------------------------- bounds

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundsRow {
    pub case: String,
    pub gamma_f: f64,
    pub gamma_l: f64,
    pub j_lower: f64,
    pub j_bar: f64,
    pub j_bar_refined: f64,
    pub mu_bar: f64,
    pub seconds: f64,
}

/// Point `(x0, u0)` the design is linearized at.
pub fn design_point(cfg: &ScenarioConfig) -> Result<(DVector<f64>, Vector2<f64>), HarnessError> {
    let nominal = cfg.nominal_model()?;
    match &cfg.inputs {
        InputSource::Synthetic(spec) => {
            let bus = InfiniteBus { v_inf: spec.v_inf, x_e: spec.x_e };
            let (x, _) = operating_point(cfg, &nominal, &bus, spec.steady)?;
            let x = cfg.x0.clone().map(DVector::from_vec).unwrap_or(x);
            let u = bus.currents(&nominal, &x);
            Ok((x, u))
        }
        InputSource::Csv { path } => {
            let rows = read_inputs_csv(path)?;
            let x0 = cfg.x0.clone().map(DVector::from_vec).ok_or_else(|| HarnessError::Config("CSV scenarios need x0".into()))?;
            Ok((x0, Vector2::new(rows[0].i_r, rows[0].i_i)))
        }
    }
}

/// Upper bound at the configured scalars, its SCA refinement and the
/// relaxation lower bound.
pub fn bounds_for(cfg: &ScenarioConfig) -> Result<BoundsRow, HarnessError> {
    cfg.validate()?;
    let start = Instant::now();
    let nominal = cfg.nominal_model()?;
    let (x0, u0) = design_point(cfg)?;
    let (inp, _) = synthesis_input(cfg, &nominal, &x0, &u0)?;
    let opts = SynthesisOptions::default();
    let upper = synthesize_upper(&inp, &opts)?;
    let rounds = cfg.synthesis.sca_rounds.max(5);
    let refined = sca_refine(&inp, &upper, rounds, &opts)?;
    let lower = relax_lower(&inp, &opts)?;
    Ok(BoundsRow {
        case: cfg.case.clone(),
        gamma_f: inp.gamma_f,
        gamma_l: inp.gamma_l,
        j_lower: lower.j_lower,
        j_bar: upper.j_bar,
        j_bar_refined: refined.j_bar,
        mu_bar: refined.mu_bar,
        seconds: start.elapsed().as_secs_f64(),
    })
}
