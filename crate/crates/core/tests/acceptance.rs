//! Acceptance criteria 1-10. Each test prints one `criterion N: PASS|FAIL`
//! line with the measured numbers, then asserts.

use std::time::Instant;

use linf_dse::estimators::*;
use linf_dse::harness::*;
use linf_dse::integrate::{integrate_adaptive, Output, Tolerances};
use linf_dse::models::*;
use linf_dse::synthesis::{relax_lower, synthesize_upper, SynthesisOptions};
use lmi_sdp::{solve, Affine, LmiBuilder, SdpOptions, SolveStatus};
use nalgebra::{DMatrix, DVector, Vector2, Vector4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

fn report(n: u32, pass: bool, detail: String) {
    println!("criterion {n}: {} | {detail}", if pass { "PASS" } else { "FAIL" });
}

fn gaussian(frac: f64) -> NoiseSpec {
    NoiseSpec { kind: NoiseKind::Gaussian { cov: None, std_fraction: frac }, ..Default::default() }
}

fn case1(seed: u64) -> ScenarioConfig {
    ScenarioConfig { case: "case1".into(), seed, ..ScenarioConfig::default() }
}

fn case2(seed: u64) -> ScenarioConfig {
    ScenarioConfig {
        case: "case2".into(),
        noise: NoiseConfig { process: gaussian(0.05), measurement: gaussian(0.05) },
        ..case1(seed)
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) }
}

#[test]
fn criterion_01_model_equivalence() {
    let start = Instant::now();
    let mp = MachineParams::default();
    let dp = derive_params(&mp);
    let bx = default_box4();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst: f64 = 0.0;
    for _ in 0..10_000 {
        let x = Vector4::from_fn(|i, _| rng.random_range(bx.x_min[i]..bx.x_max[i]));
        let u = Vector2::from_fn(|i, _| rng.random_range(bx.u_min[i]..bx.u_max[i]));
        let q = Vector2::new(rng.random_range(0.0..1.5), rng.random_range(1.0..3.0));
        worst = worst.max((raw_rhs(&x, &u, &q, &mp) - parameterized_rhs(&x, &u, &q, &dp)).amax());
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = worst <= 1e-12 && secs < 5.0;
    report(1, pass, format!("max |raw - parameterized| = {worst:.2e} over 1e4 points, {secs:.3} s"));
    assert!(pass);
}

#[test]
fn criterion_02_reference_gamma_feasibility() {
    // reference scalars on the default plant, structural linear part,
    // C from the output Jacobian at the default operating point
    let start = Instant::now();
    let mut cfg = case1(0);
    cfg.synthesis.a_split = ASplit::Structural;
    cfg.synthesis.gamma_f = 379.1;
    cfg.synthesis.gamma_l = 30.1;
    cfg.synthesis.c_scale = 10.0;
    let nominal = cfg.nominal_model().unwrap();
    let (x0, u0) = design_point(&cfg).unwrap();
    let (inp, _) = synthesis_input(&cfg, &nominal, &x0, &u0).unwrap();
    let res = synthesize_upper(&inp, &SynthesisOptions::default());
    let secs = start.elapsed().as_secs_f64();
    let (pass, detail) = match &res {
        Ok(d) => {
            let r = &d.residuals;
            let ok = (1e-5..=1e-2).contains(&d.mu_bar) && r.block1_max_eig <= 1e-7 && r.block2_max_eig <= 1e-7 && secs < 30.0;
            (ok, format!("mu_bar = {:.4e}, residuals {:.1e}/{:.1e}, {secs:.2} s", d.mu_bar, r.block1_max_eig, r.block2_max_eig))
        }
        Err(e) => (
            false,
            format!(
                "{e} after {secs:.2} s; the (omega, omega) diagonal entry needs gamma_f <~ 1 when nu4 = 1, \
                 see notes on analytic infeasibility"
            ),
        ),
    };
    report(2, pass, detail);
    assert!(pass);
}

#[test]
fn criterion_03_bound_ordering() {
    let start = Instant::now();
    let opts = SynthesisOptions::default();
    let families: Vec<(u64, f64, f64)> = (0..12u64)
        .into_par_iter()
        .map(|seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
            let mut cfg = case1(seed);
            let m = &mut cfg.machine;
            m.h *= rng.random_range(0.8..1.2);
            m.k_d *= rng.random_range(0.8..1.2);
            m.t_d0p *= rng.random_range(0.8..1.2);
            m.t_q0p *= rng.random_range(0.8..1.2);
            cfg.synthesis.gamma_f = rng.random_range(0.02..0.1);
            cfg.synthesis.gamma_l = rng.random_range(0.01..0.05);
            cfg.synthesis.nu2 = rng.random_range(1.0..50.0);
            let nominal = cfg.nominal_model().unwrap();
            let (x0, u0) = design_point(&cfg).unwrap();
            let (inp, _) = synthesis_input(&cfg, &nominal, &x0, &u0).unwrap();
            let up = synthesize_upper(&inp, &opts).unwrap();
            let lo = relax_lower(&inp, &opts).unwrap();
            (seed, lo.j_lower, up.j_bar)
        })
        .collect();
    let ordered = families.iter().filter(|(_, lo, up)| *lo <= up + 1e-9).count();

    // default computational family
    let cfg = case1(0);
    let nominal = cfg.nominal_model().unwrap();
    let (x0, u0) = design_point(&cfg).unwrap();
    let (inp, _) = synthesis_input(&cfg, &nominal, &x0, &u0).unwrap();
    let up = synthesize_upper(&inp, &opts).unwrap().j_bar;
    let lo = relax_lower(&inp, &opts).unwrap().j_lower;
    let band = |v: f64| (1e-9..=1e-5).contains(&v);
    let secs = start.elapsed().as_secs_f64();
    let pass = ordered == families.len() && lo <= up + 1e-9 && band(lo) && band(up) && secs < 300.0;
    report(
        3,
        pass,
        format!(
            "ordering holds on {ordered}/{} random families; anchored family J_lower = {lo:.3e}, J_bar = {up:.3e} \
             (band [1e-9, 1e-5]: lower {}, upper {}); {secs:.1} s",
            families.len(),
            band(lo),
            band(up)
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_04_stg_guarantee() {
    let start = Instant::now();
    let verdicts: Vec<(u64, StgVerdict)> = (0..20u64)
        .into_par_iter()
        .map(|seed| {
            let cfg = ScenarioConfig { estimators: vec![EstimatorKind::Observer], ..case1(seed) };
            let rep = run_case(&cfg).unwrap();
            assert!(rep.w_linf > 0.0);
            (seed, rep.result(EstimatorKind::Observer).unwrap().stg)
        })
        .collect();
    let secs = start.elapsed().as_secs_f64();
    let passed = verdicts.iter().filter(|(_, v)| v.pass).count();
    let worst = verdicts.iter().map(|(_, v)| v.margin).fold(0.0, f64::max);
    let pass = passed == 20 && secs < 120.0;
    report(4, pass, format!("{passed}/20 seeds satisfy max z <= mu_bar ||w||, worst ratio {worst:.3e}, {secs:.2} s"));
    assert!(pass);
}

#[test]
fn criterion_05_error_dynamics_oracle() {
    let plant = PlantModel::order4(&MachineParams::default()).unwrap();
    let bus = InfiniteBus { v_inf: 1.0, x_e: 0.5 };
    let r = Vector2::new(0.79, 1.88);
    let x0 = bus_equilibrium4(&plant, &bus, &r).unwrap();
    let u0 = bus.currents(&plant, &x0);
    let cfg = case1(0);
    let (inp, c) = synthesis_input(&cfg, &plant, &x0, &u0).unwrap();
    let m = plant.with_c(c).unwrap();
    let l = linf_dse::synthesis::synthesize_upper(&inp, &SynthesisOptions::default()).unwrap().l;
    let tol = Tolerances { rel: 1e-9, abs: 1e-11 };
    let mut worst_ratio: f64 = 0.0;
    for seed in 0..5u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (ph, amp) = (rng.random_range(0.0..6.0), rng.random_range(0.01..0.05));
        let u = move |t: f64| u0 + Vector2::new(amp * (3.0 * t + ph).sin(), 0.5 * amp * (2.0 * t).cos());
        let q = move |t: f64| r + Vector2::new(amp * (t + ph).cos(), amp * (1.5 * t).sin());
        let e0 = DVector::from_vec(vec![rng.random_range(-0.3..0.3), 0.0, rng.random_range(-0.2..0.2), 0.1]);
        let stack = |a: &DVector<f64>, b: &DVector<f64>| {
            let mut z = DVector::zeros(8);
            z.rows_mut(0, 4).copy_from(a);
            z.rows_mut(4, 4).copy_from(b);
            z
        };
        let joint = integrate_adaptive(
            |t, z: &DVector<f64>| {
                let x = z.rows(0, 4).into_owned();
                let xh = z.rows(4, 4).into_owned();
                let y = DVector::from_column_slice(m.y(&x, &u(t)).as_slice());
                stack(&m.rhs(&x, &u(t), &q(t)), &observer_rhs(&m, &l, &r, &xh, &u(t), &y))
            },
            stack(&x0, &(&x0 - &e0)),
            (0.0, 1.0),
            tol,
            Output::Grid(0.05),
        )
        .unwrap();
        let direct = integrate_adaptive(
            |t, z: &DVector<f64>| {
                let x = z.rows(0, 4).into_owned();
                let e = z.rows(4, 4).into_owned();
                stack(&m.rhs(&x, &u(t), &q(t)), &error_rhs(&m, &l, &r, &x, &e, &u(t), &q(t)))
            },
            stack(&x0, &e0),
            (0.0, 1.0),
            tol,
            Output::Grid(0.05),
        )
        .unwrap();
        for (a, b) in joint.states.iter().zip(&direct.states) {
            let diff = (a.rows(0, 4) - a.rows(4, 4) - b.rows(4, 4)).amax();
            let bound = 10.0 * (tol.abs + tol.rel * a.amax());
            worst_ratio = worst_ratio.max(diff / bound);
        }
    }
    let pass = worst_ratio <= 1.0;
    report(5, pass, format!("worst |e_joint - e_direct| is {worst_ratio:.3} x the 10x-tolerance bound over 5 scenarios"));
    assert!(pass);
}

#[test]
fn criterion_06_filter_correctness() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let n = 4;
    let sys = LinearSystem {
        f: DMatrix::from_fn(n, n, |i, j| if i == j { 0.8 } else { rng.random_range(-0.05..0.05) }),
        g: DMatrix::from_fn(n, 2, |_, _| rng.random_range(-0.5..0.5)),
        h: DMatrix::from_fn(2, n, |_, _| rng.random_range(-1.0..1.0)),
        d: DMatrix::from_fn(2, 2, |_, _| rng.random_range(-0.1..0.1)),
    };
    let q = DMatrix::from_diagonal(&DVector::from_vec(vec![1e-3, 2e-3, 1e-3, 5e-4]));
    let r = DMatrix::from_diagonal(&DVector::from_vec(vec![1e-2, 2e-2]));
    let p0 = default_p0(n);
    let x0 = DVector::from_vec(vec![0.1, -0.2, 0.3, 0.0]);
    let mut ekf = Ekf::new(x0.clone(), p0.clone(), q.clone(), r.clone());
    let mut ukf = Ukf::new(x0.clone(), p0.clone(), q.clone(), r.clone(), SigmaParams::default());
    let mut sr = SrUkf::new(x0.clone(), p0.clone(), q.clone(), r.clone(), SigmaParams::default()).unwrap();
    let (mut xk, mut pk) = (x0, p0);
    let mut x_true = DVector::from_vec(vec![0.0, 0.1, 0.2, -0.1]);
    let mut u_prev = DVector::zeros(2);
    let eye = DMatrix::<f64>::identity(n, n);
    let (mut worst, mut worst_pair): (f64, f64) = (0.0, 0.0);
    for k in 0..1000 {
        let u = DVector::from_vec(vec![(k as f64 * 0.05).sin(), 0.3]);
        x_true = sys.transition(&x_true, &u_prev) + DVector::from_fn(n, |_, _| rng.random_range(-0.03..0.03));
        let y = sys.measure(&x_true, &u) + DVector::from_fn(2, |_, _| rng.random_range(-0.1..0.1));
        let xp = &sys.f * &xk + &sys.g * &u_prev;
        let pp = &sys.f * &pk * sys.f.transpose() + &q;
        let s = &sys.h * &pp * sys.h.transpose() + &r;
        let kg = &pp * sys.h.transpose() * s.try_inverse().unwrap();
        xk = &xp + &kg * (&y - &sys.h * &xp - &sys.d * &u);
        pk = (&eye - &kg * &sys.h) * &pp;
        for f in [&mut ekf as &mut dyn Filter, &mut ukf, &mut sr] {
            f.step(&sys, &u_prev, &u, &y).unwrap();
            worst = worst.max((f.x() - &xk).amax()).max((f.covariance() - &pk).amax());
        }
        worst_pair = worst_pair.max((ukf.x() - sr.x()).amax());
        u_prev = u;
    }
    let pass = worst <= 1e-10 && worst_pair <= 1e-8;
    report(6, pass, format!("max deviation from the Kalman recursion {worst:.2e}, UKF vs SR-UKF {worst_pair:.2e}, 1000 steps"));
    assert!(pass);
}

#[test]
fn criterion_07_comparative_ranking() {
    let mut rmse_wins = 0;
    let mut time_wins = 0;
    let mut lines = Vec::new();
    for seed in 0..5u64 {
        let cfg = case2(seed);
        // min of three runs damps scheduler noise from parallel tests
        let reps: Vec<CaseReport> = (0..3).map(|_| run_case(&cfg).unwrap()).collect();
        let time = |k: EstimatorKind| reps.iter().map(|r| r.result(k).unwrap().wall_time).fold(f64::INFINITY, f64::min);
        let rm = |k: EstimatorKind| reps[0].result(k).unwrap().rmse;
        let obs = EstimatorKind::Observer;
        let others = [EstimatorKind::Ekf, EstimatorKind::Ukf, EstimatorKind::Srukf];
        let best_rmse = others.iter().all(|k| rm(obs) < rm(*k));
        let best_time = others.iter().all(|k| time(obs) < time(*k));
        rmse_wins += best_rmse as usize;
        time_wins += best_time as usize;
        lines.push(format!(
            "seed {seed}: rmse obs {:.3} ekf {:.3} ukf {:.3} sr {:.3}; ms obs {:.2} ekf {:.2} ukf {:.2} sr {:.2}",
            rm(obs),
            rm(others[0]),
            rm(others[1]),
            rm(others[2]),
            1e3 * time(obs),
            1e3 * time(others[0]),
            1e3 * time(others[1]),
            1e3 * time(others[2])
        ));
    }
    let pass = rmse_wins >= 4 && time_wins >= 4;
    report(7, pass, format!("observer lowest RMSE in {rmse_wins}/5 seeds, lowest wall time in {time_wins}/5"));
    for l in &lines {
        println!("    {l}");
    }
    assert!(pass);
}

#[test]
fn criterion_08_noise_generators() {
    let mut rng = ChaCha8Rng::seed_from_u64(81);
    let s = 0.02;
    let xs: Vec<f64> = sample_noise(&Noise::Laplace { m: 0.0, s }, 1, 1_000_000, &mut rng).iter().map(|v| v[0]).collect();
    let mean = xs.iter().sum::<f64>() / xs.len() as f64;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / xs.len() as f64;
    let lap = (var / (2.0 * s * s) - 1.0).abs();

    let b = 0.01;
    let cs: Vec<f64> = sample_noise(&Noise::Cauchy { a: 0.0, b }, 1, 1_000_000, &mut rng).iter().map(|v| v[0]).collect();
    let cau = median(cs).abs() / b;

    let spec: NoiseSpec = serde_json::from_str(r#"{"kind":"gaussian","cov":[[4e-4,1e-4],[1e-4,9e-4]]}"#).unwrap();
    let noise = spec.resolve(2, &[]).unwrap();
    let gs = sample_noise(&noise, 2, 1_000_000, &mut rng);
    let mut c = DMatrix::zeros(2, 2);
    for x in &gs {
        c += x * x.transpose();
    }
    c /= gs.len() as f64;
    let truth = noise.covariance(2);
    let gau = (&c - &truth).norm() / truth.norm();

    let pass = lap <= 0.05 && cau <= 1e-2 && gau <= 0.02;
    report(8, pass, format!("Laplace var rel err {lap:.4}, Cauchy |median|/b {cau:.4}, Gaussian cov rel Frobenius {gau:.4}"));
    assert!(pass);
}

#[test]
fn criterion_09_sdp_solver() {
    let opts = SdpOptions::default();
    let m = |r: usize, d: &[f64]| DMatrix::from_row_slice(r, d.len() / r, d);

    // min t s.t. [[t,1],[1,t]] >= 0, and min x s.t. x >= 1
    let mut b = LmiBuilder::new(1e-6);
    let t = b.scalar_var("t");
    b.add_objective(t, 1.0);
    b.psd(Affine::scaled(t, DMatrix::identity(2, 2)).add(&Affine::constant(m(2, &[0.0, 1.0, 1.0, 0.0])))).unwrap();
    let s1 = solve(&b.build().unwrap(), &opts).unwrap();
    let mut b = LmiBuilder::new(1e-6);
    let x = b.scalar_var("x");
    b.add_objective(x, 1.0);
    b.lower_bound(x, 1.0).unwrap();
    let s2 = solve(&b.build().unwrap(), &opts).unwrap();
    let trivial = [s1, s2].iter().all(|s| s.status == SolveStatus::Optimal && (s.x[0] - 1.0).abs() <= 1e-6);

    // random two-variable problems against a grid oracle
    let sym = |rng: &mut ChaCha8Rng| {
        let a = DMatrix::from_fn(3, 3, |_, _| rng.random_range(-1.0..1.0));
        (&a + a.transpose()) * 0.5
    };
    let mut grid_ok = 0;
    for seed in 0..3u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(900 + seed);
        let f0 = DMatrix::identity(3, 3) + sym(&mut rng) * 0.3;
        let (f1, f2) = (sym(&mut rng), sym(&mut rng));
        let c = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
        let mut b = LmiBuilder::new(1e-6);
        let x1 = b.scalar_var("x1");
        let x2 = b.scalar_var("x2");
        b.add_objective(x1, c[0]);
        b.add_objective(x2, c[1]);
        b.psd(Affine::constant(f0.clone()).add(&Affine::scaled(x1, f1.clone())).add(&Affine::scaled(x2, f2.clone())))
            .unwrap();
        for v in [x1, x2] {
            b.lower_bound(v, -1.0).unwrap();
            b.nsd(Affine::scalar(v).sub(&Affine::constant(m(1, &[1.0])))).unwrap();
        }
        let sol = solve(&b.build().unwrap(), &opts).unwrap();
        let h = 2e-3;
        let steps = (2.0 / h) as i64;
        let mut best = f64::INFINITY;
        for i in 0..=steps {
            let a = -1.0 + i as f64 * h;
            for j in 0..=steps {
                let bb = -1.0 + j as f64 * h;
                let obj = c[0] * a + c[1] * bb;
                if obj < best && (&f0 + &f1 * a + &f2 * bb).symmetric_eigen().eigenvalues.min() >= 0.0 {
                    best = obj;
                }
            }
        }
        let tol = (c[0].abs() + c[1].abs()) * h * 2.0 + 1e-6;
        if sol.status == SolveStatus::Optimal && sol.primal_obj <= best + 1e-7 && best - sol.primal_obj <= tol {
            grid_ok += 1;
        }
    }

    // x >= 1 and x <= -1
    let mut b = LmiBuilder::new(1e-6);
    let x = b.scalar_var("x");
    b.add_objective(x, 1.0);
    b.lower_bound(x, 1.0).unwrap();
    b.nsd(Affine::scalar(x).add(&Affine::constant(m(1, &[1.0])))).unwrap();
    let sandwich = solve(&b.build().unwrap(), &opts).unwrap().status == SolveStatus::Infeasible;

    let pass = trivial && grid_ok == 3 && sandwich;
    report(9, pass, format!("trivial t* = 1: {trivial}, grid oracle {grid_ok}/3, sandwich flagged infeasible: {sandwich}"));
    assert!(pass);
}

#[test]
fn criterion_10_uncertainty_monotone() {
    let deltas = [0.0, 0.02, 0.05, 0.1];
    let rows: Vec<(u64, Vec<f64>)> = (0..5u64)
        .into_par_iter()
        .map(|seed| {
            let v = deltas
                .iter()
                .map(|d| {
                    let cfg = ScenarioConfig { uncertainty: *d, estimators: vec![EstimatorKind::Observer], ..case2(seed) };
                    run_case(&cfg).unwrap().result(EstimatorKind::Observer).unwrap().mean_e_window
                })
                .collect();
            (seed, v)
        })
        .collect();
    let monotone = rows.iter().filter(|(_, v)| v.windows(2).all(|w| w[0] <= w[1])).count();
    let pass = monotone == rows.len();
    report(10, pass, format!("mean ||e|| over [10, 15] nondecreasing in delta for {monotone}/{} seeds", rows.len()));
    for (seed, v) in &rows {
        println!("    seed {seed}: {}", v.iter().map(|x| format!("{x:.4e}")).collect::<Vec<_>>().join(" "));
    }
    assert!(pass);
}
