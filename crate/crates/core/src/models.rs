//! Synchronous-generator models.
//!
//! State `x = [delta, omega, e'_q, e'_d]`, measured input `u = [i_R, i_I]`,
//! unknown input `q = [T_m, E_fd]`, output `y = [e_R, e_I]`. The 10th-order
//! variant appends an IEEE DC1 exciter and a three-state turbine-governor.

use nalgebra::{
    Complex, DMatrix, DVector, Matrix2x4, Matrix4, Matrix4x2, Vector2, Vector4,
};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const OMEGA0: f64 = 2.0 * std::f64::consts::PI * 60.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid machine parameters: {0}")]
    InvalidParams(String),
    #[error("invalid operating box: {0}")]
    InvalidBox(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MachineParams {
    pub h: f64,
    pub k_d: f64,
    pub t_d0p: f64,
    pub t_q0p: f64,
    pub x_d: f64,
    pub x_q: f64,
    pub x_dp: f64,
    pub x_qp: f64,
    pub s_b: f64,
    pub s_n: f64,
    pub omega0: f64,
}

impl Default for MachineParams {
    fn default() -> Self {
        Self {
            h: 3.0,
            k_d: 4.0,
            t_d0p: 5.0,
            t_q0p: 0.8,
            x_d: 1.8,
            x_q: 1.7,
            x_dp: 0.3,
            x_qp: 0.55,
            s_b: 100.0,
            s_n: 100.0,
            omega0: OMEGA0,
        }
    }
}

impl MachineParams {
    pub fn validate(&self) -> Result<(), ModelError> {
        let positive = [
            ("H", self.h),
            ("T_d0p", self.t_d0p),
            ("T_q0p", self.t_q0p),
            ("x_dp", self.x_dp),
            ("x_qp", self.x_qp),
            ("S_B", self.s_b),
            ("S_N", self.s_n),
            ("omega0", self.omega0),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(ModelError::InvalidParams(format!("{name} must be positive, got {v}")));
            }
        }
        if self.k_d < 0.0 {
            return Err(ModelError::InvalidParams("K_D must be nonnegative".into()));
        }
        if self.x_d < self.x_dp {
            return Err(ModelError::InvalidParams("x_d < x_dp".into()));
        }
        if self.x_q < self.x_qp {
            return Err(ModelError::InvalidParams("x_q < x_qp".into()));
        }
        Ok(())
    }

    /// Base conversion factor S_B / S_N.
    pub fn base_ratio(&self) -> f64 {
        self.s_b / self.s_n
    }
}

/// Coefficients of the parameterized model. `alpha[0]` is alpha_1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DerivedParams {
    pub alpha: [f64; 10],
    pub beta: [f64; 2],
}

pub fn derive_params(mp: &MachineParams) -> DerivedParams {
    let w0 = mp.omega0;
    let k = mp.base_ratio();
    let m = w0 / (2.0 * mp.h);
    DerivedParams {
        alpha: [
            w0,
            m,
            m * k,
            m * k * k * (mp.x_qp - mp.x_dp),
            mp.k_d / (2.0 * mp.h),
            mp.k_d * w0 / (2.0 * mp.h),
            1.0 / mp.t_d0p,
            (mp.x_d - mp.x_dp) / mp.t_d0p,
            1.0 / mp.t_q0p,
            (mp.x_q - mp.x_qp) / mp.t_q0p,
        ],
        beta: [k * (mp.x_qp - mp.x_dp) / 2.0, k * (mp.x_qp + mp.x_dp) / 2.0],
    }
}

/// Stator quantities `(i_q, i_d, e_q, e_d)` of the raw model.
fn stator(x: &Vector4<f64>, u: &Vector2<f64>, mp: &MachineParams) -> (f64, f64, f64, f64) {
    let k = mp.base_ratio();
    let (s, c) = x[0].sin_cos();
    let iq = u[1] * s + u[0] * c;
    let id = u[0] * s - u[1] * c;
    let eq = x[2] - k * mp.x_dp * id;
    let ed = x[3] + k * mp.x_qp * iq;
    (iq, id, eq, ed)
}

/// Physical form through the intermediate chain i_q, i_d, e_q, e_d, P_e, T_e.
pub fn raw_rhs(
    x: &Vector4<f64>,
    u: &Vector2<f64>,
    q: &Vector2<f64>,
    mp: &MachineParams,
) -> Vector4<f64> {
    let (iq, id, eq, ed) = stator(x, u, mp);
    let pe = eq * iq + ed * id;
    let te = mp.base_ratio() * pe;
    let w0 = mp.omega0;
    Vector4::new(
        x[1] - w0,
        w0 / (2.0 * mp.h) * (q[0] - te - mp.k_d / w0 * (x[1] - w0)),
        (q[1] - x[2] - (mp.x_d - mp.x_dp) * id) / mp.t_d0p,
        (-x[3] + (mp.x_q - mp.x_qp) * iq) / mp.t_q0p,
    )
}

pub fn raw_output(x: &Vector4<f64>, u: &Vector2<f64>, mp: &MachineParams) -> Vector2<f64> {
    let (_, _, eq, ed) = stator(x, u, mp);
    let (s, c) = x[0].sin_cos();
    Vector2::new(ed * s + eq * c, eq * s - ed * c)
}

pub fn parameterized_rhs(
    x: &Vector4<f64>,
    u: &Vector2<f64>,
    q: &Vector2<f64>,
    dp: &DerivedParams,
) -> Vector4<f64> {
    let a = &dp.alpha;
    let (s, c) = x[0].sin_cos();
    let (s2, c2) = (2.0 * x[0]).sin_cos();
    let (u1, u2) = (u[0], u[1]);
    Vector4::new(
        x[1] - a[0],
        a[1] * q[0] - a[4] * x[1] - a[2] * (x[2] * u2 + x[3] * u1) * s
            + a[2] * (x[3] * u2 - x[2] * u1) * c
            + a[3] * u1 * u2 * c2
            + 0.5 * a[3] * (u2 * u2 - u1 * u1) * s2
            + a[5],
        a[6] * q[1] - a[6] * x[2] - a[7] * (u1 * s - u2 * c),
        a[9] * (u1 * c + u2 * s) - a[8] * x[3],
    )
}

/// Jacobian of the parameterized right-hand side with respect to `x`.
pub fn rhs_jacobian(x: &Vector4<f64>, u: &Vector2<f64>, dp: &DerivedParams) -> Matrix4<f64> {
    let a = &dp.alpha;
    let (s, c) = x[0].sin_cos();
    let (s2, c2) = (2.0 * x[0]).sin_cos();
    let (u1, u2) = (u[0], u[1]);
    let mut j = Matrix4::zeros();
    j[(0, 1)] = 1.0;
    j[(1, 0)] = -a[2] * (x[2] * u2 + x[3] * u1) * c - a[2] * (x[3] * u2 - x[2] * u1) * s
        - 2.0 * a[3] * u1 * u2 * s2
        + a[3] * (u2 * u2 - u1 * u1) * c2;
    j[(1, 1)] = -a[4];
    j[(1, 2)] = -a[2] * (u2 * s + u1 * c);
    j[(1, 3)] = -a[2] * (u1 * s - u2 * c);
    j[(2, 0)] = -a[7] * (u1 * c + u2 * s);
    j[(2, 2)] = -a[6];
    j[(3, 0)] = a[9] * (u2 * c - u1 * s);
    j[(3, 3)] = -a[8];
    j
}

/// Full PMU output `y = h(x,u) + D_u [q; u]` in the beta form.
pub fn h_output(x: &Vector4<f64>, u: &Vector2<f64>, dp: &DerivedParams) -> Vector2<f64> {
    let [b1, b2] = dp.beta;
    let (s, c) = x[0].sin_cos();
    let (s2, c2) = (2.0 * x[0]).sin_cos();
    Vector2::new(
        x[2] * c + x[3] * s + b1 * u[0] * s2 - b1 * u[1] * c2 + b2 * u[1],
        x[2] * s - x[3] * c - b1 * u[0] * c2 - b1 * u[1] * s2 - b2 * u[0],
    )
}

/// Analytic Jacobian of the output with respect to `x`.
pub fn output_jacobian(x: &Vector4<f64>, u: &Vector2<f64>, dp: &DerivedParams) -> Matrix2x4<f64> {
    let b1 = dp.beta[0];
    let (s, c) = x[0].sin_cos();
    let (s2, c2) = (2.0 * x[0]).sin_cos();
    Matrix2x4::new(
        -x[2] * s + x[3] * c + 2.0 * b1 * (u[0] * c2 + u[1] * s2),
        0.0,
        c,
        s,
        x[2] * c + x[3] * s + 2.0 * b1 * (u[0] * s2 - u[1] * c2),
        0.0,
        s,
        -c,
    )
}

/// `(A, B_w, D_u)`; `D_u` multiplies the combined input `[q1, q2, u1, u2]`.
pub fn build_matrices(dp: &DerivedParams) -> (Matrix4<f64>, Matrix4x2<f64>, Matrix2x4<f64>) {
    let a = &dp.alpha;
    let mut am = Matrix4::zeros();
    am[(0, 1)] = 1.0;
    am[(1, 1)] = -a[4];
    am[(2, 2)] = -a[6];
    am[(3, 3)] = -a[8];
    let mut bw = Matrix4x2::zeros();
    bw[(1, 0)] = a[1];
    bw[(2, 1)] = a[6];
    let mut du = Matrix2x4::zeros();
    du[(0, 3)] = dp.beta[1];
    du[(1, 2)] = -dp.beta[1];
    (am, bw, du)
}

pub fn linearize_output(
    x_op: &Vector4<f64>,
    u_op: &Vector2<f64>,
    dp: &DerivedParams,
    scale: f64,
) -> Matrix2x4<f64> {
    output_jacobian(x_op, u_op, dp) * scale
}

/// Output nonlinearity without the feedthrough, `y - D_u [q; u]`.
pub fn h_nonlinear(x: &Vector4<f64>, u: &Vector2<f64>, dp: &DerivedParams) -> Vector2<f64> {
    let b2 = dp.beta[1];
    h_output(x, u, dp) - Vector2::new(b2 * u[1], -b2 * u[0])
}

/// `h_l(x,u) = h(x,u) - C x`.
pub fn h_l(
    x: &Vector4<f64>,
    u: &Vector2<f64>,
    dp: &DerivedParams,
    c: &Matrix2x4<f64>,
) -> Vector2<f64> {
    h_nonlinear(x, u, dp) - c * x
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatingBox {
    pub x_min: Vec<f64>,
    pub x_max: Vec<f64>,
    pub u_min: Vec<f64>,
    pub u_max: Vec<f64>,
}

impl OperatingBox {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.x_min.len() != self.x_max.len() || self.u_min.len() != 2 || self.u_max.len() != 2 {
            return Err(ModelError::InvalidBox("inconsistent lengths".into()));
        }
        for (i, (lo, hi)) in self.x_min.iter().zip(&self.x_max).enumerate() {
            if !(lo < hi) {
                return Err(ModelError::InvalidBox(format!("state {} has empty interior", i + 1)));
            }
        }
        for (i, (lo, hi)) in self.u_min.iter().zip(&self.u_max).enumerate() {
            if !(lo < hi) {
                return Err(ModelError::InvalidBox(format!("input {} has empty interior", i + 1)));
            }
        }
        Ok(())
    }

    pub fn x_mid(&self) -> DVector<f64> {
        DVector::from_iterator(
            self.x_min.len(),
            self.x_min.iter().zip(&self.x_max).map(|(a, b)| 0.5 * (a + b)),
        )
    }

    pub fn u_mid(&self) -> Vector2<f64> {
        Vector2::new(
            0.5 * (self.u_min[0] + self.u_max[0]),
            0.5 * (self.u_min[1] + self.u_max[1]),
        )
    }

    pub fn contains_x(&self, x: &DVector<f64>) -> bool {
        x.iter()
            .zip(self.x_min.iter().zip(&self.x_max))
            .all(|(v, (lo, hi))| *lo <= *v && *v <= *hi)
    }
}

/// Box around the default single-machine operating point.
pub fn default_box4() -> OperatingBox {
    OperatingBox {
        x_min: vec![0.5, OMEGA0 - 3.0, 0.6, 0.2],
        x_max: vec![1.7, OMEGA0 + 3.0, 1.5, 0.9],
        u_min: vec![0.4, -0.4],
        u_max: vec![1.2, 0.5],
    }
}

/// IEEE Type DC1 exciter without saturation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExciterParams {
    pub k_a: f64,
    pub t_a: f64,
    pub k_e: f64,
    pub t_e: f64,
    pub k_f: f64,
    pub t_f: f64,
}

impl Default for ExciterParams {
    fn default() -> Self {
        Self { k_a: 20.0, t_a: 0.055, k_e: 1.0, t_e: 0.36, k_f: 0.125, t_f: 1.8 }
    }
}

/// Simplified steam turbine-governor: servo, transient gain reduction, reheat.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GovernorParams {
    /// Droop in per unit speed per per unit power.
    pub r: f64,
    pub t_s: f64,
    pub t_c: f64,
    pub t_3: f64,
    pub t_4: f64,
    pub t_5: f64,
}

impl Default for GovernorParams {
    fn default() -> Self {
        Self { r: 0.05, t_s: 0.1, t_c: 0.5, t_3: 0.0, t_4: 1.25, t_5: 5.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct MachineParams10 {
    pub machine: MachineParams,
    pub exciter: ExciterParams,
    pub governor: GovernorParams,
}

impl MachineParams10 {
    pub fn validate(&self) -> Result<(), ModelError> {
        self.machine.validate()?;
        let e = &self.exciter;
        let g = &self.governor;
        for (name, v) in [
            ("T_A", e.t_a),
            ("T_E", e.t_e),
            ("T_F", e.t_f),
            ("R", g.r),
            ("T_s", g.t_s),
            ("T_c", g.t_c),
            ("T_5", g.t_5),
        ] {
            if !(v > 0.0) {
                return Err(ModelError::InvalidParams(format!("{name} must be positive")));
            }
        }
        Ok(())
    }

    /// Mechanical torque delivered by the governor states.
    pub fn torque(&self, tg: [f64; 3]) -> f64 {
        let g = &self.governor;
        tg[2] + g.t_4 / g.t_5 * (tg[1] + g.t_3 / g.t_c * tg[0])
    }
}

/// Right-hand side of the 10th-order model, state
/// `[delta, omega, e'_q, e'_d, V_R, E_fd, R_f, tg1, tg2, tg3]` and
/// unknown input `q = [P_ref, V_ref]`.
pub fn rhs_10th(x: &DVector<f64>, u: &Vector2<f64>, q: &Vector2<f64>, p: &MachineParams10) -> DVector<f64> {
    let mp = &p.machine;
    let e = &p.exciter;
    let g = &p.governor;
    let x4 = Vector4::new(x[0], x[1], x[2], x[3]);
    let tm = p.torque([x[7], x[8], x[9]]);
    let efd = x[5];
    let m = raw_rhs(&x4, u, &Vector2::new(tm, efd), mp);
    let vt = raw_output(&x4, u, mp).norm();
    let vf = e.k_f / e.t_f * efd - x[6];
    let p_in = q[0] + (1.0 - x[1] / mp.omega0) / g.r;
    let lead = x[8] + g.t_3 / g.t_c * x[7];
    DVector::from_vec(vec![
        m[0],
        m[1],
        m[2],
        m[3],
        (e.k_a * (q[1] - vt - vf) - x[4]) / e.t_a,
        (x[4] - e.k_e * efd) / e.t_e,
        (e.k_f / e.t_f * efd - x[6]) / e.t_f,
        (p_in - x[7]) / g.t_s,
        ((1.0 - g.t_3 / g.t_c) * x[7] - x[8]) / g.t_c,
        ((1.0 - g.t_4 / g.t_5) * lead - x[9]) / g.t_5,
    ])
}

/// Equilibrium of the 10th-order model that reproduces a 4th-order
/// equilibrium `x4` carrying unknown inputs `q4 = [T_m, E_fd]` at current `u`.
/// Returns the state and the matching `[P_ref, V_ref]`.
pub fn equilibrium_10th(
    x4: &Vector4<f64>,
    u: &Vector2<f64>,
    q4: &Vector2<f64>,
    p: &MachineParams10,
) -> (DVector<f64>, Vector2<f64>) {
    let e = &p.exciter;
    let g = &p.governor;
    let efd = q4[1];
    let vr = e.k_e * efd;
    let rf = e.k_f / e.t_f * efd;
    let vt = raw_output(x4, u, &p.machine).norm();
    let v_ref = vt + vr / e.k_a;
    let tg1 = q4[0];
    let tg2 = (1.0 - g.t_3 / g.t_c) * tg1;
    let tg3 = (1.0 - g.t_4 / g.t_5) * tg1;
    let p_ref = tg1 - (1.0 - x4[1] / p.machine.omega0) / g.r;
    let x = DVector::from_vec(vec![x4[0], x4[1], x4[2], x4[3], vr, efd, rf, tg1, tg2, tg3]);
    (x, Vector2::new(p_ref, v_ref))
}

fn linear_part_10th(p: &MachineParams10, dp: &DerivedParams) -> (DMatrix<f64>, DMatrix<f64>) {
    let e = &p.exciter;
    let g = &p.governor;
    let a = &dp.alpha;
    let mut am = DMatrix::zeros(10, 10);
    let mut bw = DMatrix::zeros(10, 2);
    am[(0, 1)] = 1.0;
    am[(1, 1)] = -a[4];
    am[(1, 7)] = a[1] * g.t_4 / g.t_5 * g.t_3 / g.t_c;
    am[(1, 8)] = a[1] * g.t_4 / g.t_5;
    am[(1, 9)] = a[1];
    am[(2, 2)] = -a[6];
    am[(2, 5)] = a[6];
    am[(3, 3)] = -a[8];
    am[(4, 4)] = -1.0 / e.t_a;
    am[(4, 5)] = -e.k_a * e.k_f / (e.t_f * e.t_a);
    am[(4, 6)] = e.k_a / e.t_a;
    am[(5, 4)] = 1.0 / e.t_e;
    am[(5, 5)] = -e.k_e / e.t_e;
    am[(6, 5)] = e.k_f / (e.t_f * e.t_f);
    am[(6, 6)] = -1.0 / e.t_f;
    am[(7, 1)] = -1.0 / (p.machine.omega0 * g.r * g.t_s);
    am[(7, 7)] = -1.0 / g.t_s;
    am[(8, 7)] = (1.0 - g.t_3 / g.t_c) / g.t_c;
    am[(8, 8)] = -1.0 / g.t_c;
    am[(9, 7)] = (1.0 - g.t_4 / g.t_5) * g.t_3 / g.t_c / g.t_5;
    am[(9, 8)] = (1.0 - g.t_4 / g.t_5) / g.t_5;
    am[(9, 9)] = -1.0 / g.t_5;
    bw[(4, 1)] = e.k_a / e.t_a;
    bw[(7, 0)] = 1.0 / g.t_s;
    (am, bw)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Dynamics {
    Order4(MachineParams),
    Order10(MachineParams10),
}

/// State-space model `x' = A x + f(x,u) + B_w q`, `y = C x + h_l(x,u) + D_u [q; u]`.
///
/// `uncertainty` inflates `A`, `f` and `h` by `(1 + delta)`; it is meant for
/// plant instances only, observers keep the nominal model.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantModel {
    pub n_x: usize,
    pub a: DMatrix<f64>,
    pub b_w: DMatrix<f64>,
    pub d_u: DMatrix<f64>,
    pub d_w: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub dp: DerivedParams,
    pub dynamics: Dynamics,
    pub uncertainty: f64,
}

impl PlantModel {
    pub fn order4(mp: &MachineParams) -> Result<Self, ModelError> {
        mp.validate()?;
        let dp = derive_params(mp);
        let (a, bw, du) = build_matrices(&dp);
        Ok(Self {
            n_x: 4,
            a: DMatrix::from_fn(4, 4, |i, j| a[(i, j)]),
            b_w: DMatrix::from_fn(4, 2, |i, j| bw[(i, j)]),
            d_u: DMatrix::from_fn(2, 4, |i, j| du[(i, j)]),
            d_w: DMatrix::zeros(2, 2),
            c: DMatrix::zeros(2, 4),
            dp,
            dynamics: Dynamics::Order4(mp.clone()),
            uncertainty: 0.0,
        })
    }

    pub fn order10(p: &MachineParams10) -> Result<Self, ModelError> {
        p.validate()?;
        let dp = derive_params(&p.machine);
        let (a, b_w) = linear_part_10th(p, &dp);
        let (_, _, du) = build_matrices(&dp);
        Ok(Self {
            n_x: 10,
            a,
            b_w,
            d_u: DMatrix::from_fn(2, 4, |i, j| du[(i, j)]),
            d_w: DMatrix::zeros(2, 2),
            c: DMatrix::zeros(2, 10),
            dp,
            dynamics: Dynamics::Order10(p.clone()),
            uncertainty: 0.0,
        })
    }

    pub fn with_c(mut self, c: DMatrix<f64>) -> Result<Self, ModelError> {
        if c.nrows() != 2 || c.ncols() != self.n_x {
            return Err(ModelError::Dimension(format!(
                "C is {}x{}, expected 2x{}",
                c.nrows(),
                c.ncols(),
                self.n_x
            )));
        }
        self.c = c;
        Ok(self)
    }

    pub fn with_uncertainty(mut self, delta: f64) -> Self {
        self.uncertainty = delta;
        self
    }

    fn head(x: &DVector<f64>) -> Vector4<f64> {
        Vector4::new(x[0], x[1], x[2], x[3])
    }

    /// Nominal right-hand side without the uncertainty factor.
    fn nominal_rhs(&self, x: &DVector<f64>, u: &Vector2<f64>, q: &Vector2<f64>) -> DVector<f64> {
        match &self.dynamics {
            Dynamics::Order4(_) => {
                let r = parameterized_rhs(&Self::head(x), u, q, &self.dp);
                DVector::from_column_slice(r.as_slice())
            }
            Dynamics::Order10(p) => rhs_10th(x, u, q, p),
        }
    }

    /// `f(x,u)`: everything that is not `A x` or `B_w q`.
    pub fn f(&self, x: &DVector<f64>, u: &Vector2<f64>) -> DVector<f64> {
        self.nominal_rhs(x, u, &Vector2::zeros()) - &self.a * x
    }

    pub fn rhs(&self, x: &DVector<f64>, u: &Vector2<f64>, q: &Vector2<f64>) -> DVector<f64> {
        let free = self.nominal_rhs(x, u, &Vector2::zeros());
        free * (1.0 + self.uncertainty) + &self.b_w * q
    }

    /// Jacobian of `rhs` with respect to `x`.
    pub fn jac_x(&self, x: &DVector<f64>, u: &Vector2<f64>) -> DMatrix<f64> {
        let x4 = Self::head(x);
        let j4 = rhs_jacobian(&x4, u, &self.dp);
        let mut j = self.a.clone();
        // replace the machine rows with the exact ones
        for r in 0..4 {
            for c in 0..4 {
                j[(r, c)] = j4[(r, c)];
            }
        }
        if let Dynamics::Order10(p) = &self.dynamics {
            let mp = &p.machine;
            let y = raw_output(&x4, u, mp);
            let vt = y.norm();
            if vt > 0.0 {
                let hy = output_jacobian(&x4, u, &self.dp);
                let g = (hy.transpose() * y) / vt;
                for c in 0..4 {
                    j[(4, c)] -= p.exciter.k_a / p.exciter.t_a * g[c];
                }
            }
        }
        j * (1.0 + self.uncertainty)
    }

    /// Full output `y`.
    pub fn y(&self, x: &DVector<f64>, u: &Vector2<f64>) -> Vector2<f64> {
        let x4 = Self::head(x);
        let b2 = self.dp.beta[1];
        let feed = Vector2::new(b2 * u[1], -b2 * u[0]);
        h_nonlinear(&x4, u, &self.dp) * (1.0 + self.uncertainty) + feed
    }

    pub fn jac_y(&self, x: &DVector<f64>, u: &Vector2<f64>) -> DMatrix<f64> {
        let hy = output_jacobian(&Self::head(x), u, &self.dp) * (1.0 + self.uncertainty);
        let mut j = DMatrix::zeros(2, self.n_x);
        j.view_mut((0, 0), (2, 4)).copy_from(&hy);
        j
    }

    /// `h_l(x,u) = h(x,u) - C x` for the nominal model.
    pub fn h_l(&self, x: &DVector<f64>, u: &Vector2<f64>) -> Vector2<f64> {
        let h = h_nonlinear(&Self::head(x), u, &self.dp);
        let cx = &self.c * x;
        Vector2::new(h[0] - cx[0], h[1] - cx[1])
    }

    /// `D_u [q; u]`.
    pub fn feedthrough(&self, q: &Vector2<f64>, u: &Vector2<f64>) -> Vector2<f64> {
        let v = DVector::from_vec(vec![q[0], q[1], u[0], u[1]]);
        let r = &self.d_u * v;
        Vector2::new(r[0], r[1])
    }

    /// Scaled output Jacobian at an operating point.
    pub fn linearize_output(&self, x_op: &DVector<f64>, u_op: &Vector2<f64>, scale: f64) -> DMatrix<f64> {
        let c4 = linearize_output(&Self::head(x_op), u_op, &self.dp, scale);
        let mut c = DMatrix::zeros(2, self.n_x);
        c.view_mut((0, 0), (2, 4)).copy_from(&c4);
        c
    }

    /// Hautus test on the modes of `A` with nonnegative real part.
    pub fn is_detectable(&self) -> bool {
        is_detectable(&self.a, &self.c)
    }
}

pub fn is_detectable(a: &DMatrix<f64>, c: &DMatrix<f64>) -> bool {
    let n = a.nrows();
    let scale = 1.0 + a.amax() + c.amax();
    for lam in a.complex_eigenvalues().iter() {
        if lam.re < -1e-9 * scale {
            continue;
        }
        let mut m = DMatrix::<Complex<f64>>::zeros(n + c.nrows(), n);
        for i in 0..n {
            for j in 0..n {
                m[(i, j)] = Complex::new(a[(i, j)], 0.0);
            }
            m[(i, i)] -= lam;
        }
        for i in 0..c.nrows() {
            for j in 0..n {
                m[(n + i, j)] = Complex::new(c[(i, j)], 0.0);
            }
        }
        let sv = m.singular_values();
        if sv.min() <= 1e-9 * scale {
            return false;
        }
    }
    true
}
