use std::process::Command;

use linf_dse::estimators::{NoiseKind, NoiseSpec};
use linf_dse::harness::*;
use linf_dse::models::{default_box4, MachineParams, PlantModel};
use nalgebra::{DVector, Vector2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn dv(v: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(v)
}

fn quiet_spec() -> SyntheticSpec {
    SyntheticSpec { amplitude: [0.0, 0.0], ..SyntheticSpec::default() }
}

fn case1(seed: u64) -> ScenarioConfig {
    ScenarioConfig { case: "t1".into(), seed, ..ScenarioConfig::default() }
}

// ---------------------------------------------------------------- rmse

#[test]
fn rmse_identity_is_zero() {
    let x: Vec<_> = (0..50).map(|k| dv(&[k as f64, 1.0, -2.0])).collect();
    assert_eq!(rmse(&x, &x).unwrap(), 0.0);
}

#[test]
fn rmse_constant_offset() {
    let x: Vec<_> = (0..37).map(|k| dv(&[k as f64 * 0.1, 2.0])).collect();
    let xh: Vec<_> = x.iter().map(|v| dv(&[v[0], v[1] - 0.37])).collect();
    assert!((rmse(&x, &xh).unwrap() - 0.37).abs() < 1e-15);
}

#[test]
fn rmse_is_sum_of_roots() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let n = 200;
    let x: Vec<_> = (0..n).map(|_| dv(&[rng.random(), rng.random()])).collect();
    let xh: Vec<_> = (0..n).map(|_| dv(&[rng.random(), rng.random()])).collect();
    let mut want = 0.0;
    for i in 0..2 {
        let mut acc = 0.0;
        for k in 0..n {
            acc += (x[k][i] - xh[k][i]) * (x[k][i] - xh[k][i]);
        }
        want += (acc / n as f64).sqrt();
    }
    assert!((rmse(&x, &xh).unwrap() - want).abs() < 1e-12);
}

#[test]
fn rmse_grid_mismatch() {
    let x = vec![dv(&[1.0]); 3];
    let xh = vec![dv(&[1.0]); 4];
    assert!(matches!(rmse(&x, &xh), Err(HarnessError::GridMismatch)));
    assert!(matches!(rmse(&x, &vec![dv(&[1.0, 2.0]); 3]), Err(HarnessError::GridMismatch)));
}

// ---------------------------------------------------------------- stg / w

#[test]
fn stg_zero_series() {
    let t: Vec<f64> = (0..=900).map(|k| k as f64 / 60.0).collect();
    let v = stg_check(&t, &vec![0.0; t.len()], 0.01, 0.1, (10.0, 15.0));
    assert!(v.pass);
    assert_eq!(v.margin, 0.0);
}

#[test]
fn stg_twice_bound_fails() {
    let t: Vec<f64> = (0..=900).map(|k| k as f64 / 60.0).collect();
    let v = stg_check(&t, &vec![2.0 * 0.01 * 0.1; t.len()], 0.01, 0.1, (10.0, 15.0));
    assert!(!v.pass);
    assert!((v.margin - 2.0).abs() < 1e-12);
}

#[test]
fn stg_reference_numbers() {
    let t = vec![10.0, 12.0, 15.0];
    let v = stg_check(&t, &[1e-5, 4.8362e-5, 2e-5], 1.0, 1.0553e-4, (10.0, 15.0));
    assert!(v.pass);
    assert_eq!(v.max_z, 4.8362e-5);
}

#[test]
fn stg_ignores_samples_outside_window() {
    let t = vec![0.0, 5.0, 10.0, 15.0, 16.0];
    let v = stg_check(&t, &[9.0, 9.0, 0.1, 0.1, 9.0], 1.0, 0.2, (10.0, 15.0));
    assert!(v.pass);
}

#[test]
fn w_linf_cases() {
    let r = Vector2::new(0.79, 1.88);
    assert_eq!(w_linf(&vec![r; 10], &r), 0.0);
    let q = vec![r + Vector2::new(3.0, 4.0); 5];
    assert!((w_linf(&q, &r) - 5.0).abs() < 1e-12);

    let t = frame_times(15.0);
    let base = vec![r; t.len()];
    let e = Edit { channel: 1, t_start: 2.0, t_end: 4.0, kind: EditKind::Ramp, magnitude: 0.3 };
    let q = apply_edits(&t, &base, &[e]).unwrap();
    let direct = q.iter().map(|v| ((v[0] - r[0]).powi(2) + (v[1] - r[1]).powi(2)).sqrt()).fold(0.0, f64::max);
    assert_eq!(w_linf(&q, &r), direct);
    assert!((direct - 0.3).abs() < 1e-12);
}

// ---------------------------------------------------------------- edits

#[test]
fn empty_edits_identity() {
    let t = frame_times(2.0);
    let q: Vec<_> = t.iter().map(|s| Vector2::new(s.sin(), s.cos())).collect();
    assert_eq!(apply_edits(&t, &q, &[]).unwrap(), q);
}

#[test]
fn step_edit_exact_offset() {
    let t = frame_times(15.0);
    let q = vec![Vector2::new(0.79, 1.88); t.len()];
    let e = Edit { channel: 2, t_start: 5.0, t_end: 10.0, kind: EditKind::Step, magnitude: 0.1 };
    let out = apply_edits(&t, &q, &[e]).unwrap();
    for (s, v) in t.iter().zip(&out) {
        let want = if (5.0..=10.0).contains(s) { 1.88 + 0.1 } else { 1.88 };
        assert_eq!(v[1], want, "t = {s}");
        assert_eq!(v[0], 0.79);
    }
}

#[test]
fn ramp_edit_endpoint_and_hold() {
    let t = frame_times(15.0);
    let q = vec![Vector2::new(0.0, 0.0); t.len()];
    let e = Edit { channel: 1, t_start: 3.0, t_end: 6.0, kind: EditKind::Ramp, magnitude: -0.2 };
    let out = apply_edits(&t, &q, &[e]).unwrap();
    let at = |s: f64| out[(s * 60.0).round() as usize][0];
    assert_eq!(at(3.0), 0.0);
    assert!((at(4.5) + 0.1).abs() < 1e-12);
    assert!((at(6.0) + 0.2).abs() < 1e-12);
    assert!((at(12.0) + 0.2).abs() < 1e-12);
}

#[test]
fn overlapping_edits_rejected() {
    let t = frame_times(15.0);
    let q = vec![Vector2::zeros(); t.len()];
    let a = Edit { channel: 1, t_start: 1.0, t_end: 5.0, kind: EditKind::Step, magnitude: 0.1 };
    let b = Edit { channel: 1, t_start: 4.0, t_end: 8.0, kind: EditKind::Ramp, magnitude: 0.1 };
    assert!(matches!(apply_edits(&t, &q, &[a, b]), Err(HarnessError::Overlap(1))));
    // other channel, or touching windows, is fine
    let c = Edit { channel: 2, ..b };
    let d = Edit { t_start: 5.0, ..b };
    assert!(apply_edits(&t, &q, &[a, c]).is_ok());
    assert!(apply_edits(&t, &q, &[a, d]).is_ok());
}

// ---------------------------------------------------------------- inputs

#[test]
fn zero_envelope_is_constant() {
    let t = frame_times(15.0);
    let q = synth_q(&quiet_spec(), [0.79, 1.88], 3, &t);
    assert!(q.iter().all(|v| *v == Vector2::new(0.79, 1.88)));
    let (_, u, q) = synth_inputs(&quiet_spec(), &MachineParams::default(), 3, 5.0).unwrap();
    assert!(q.iter().all(|v| *v == Vector2::new(0.79, 1.88)));
    for v in &u {
        assert!((v - u[0]).amax() < 1e-8, "currents drift at equilibrium");
    }
}

#[test]
fn oscillation_decays_within_one_percent() {
    let spec = SyntheticSpec { decay: 2.0, amplitude: [0.05, 0.1], ..SyntheticSpec::default() };
    let t = frame_times(15.0);
    let q = synth_q(&spec, spec.steady, 11, &t);
    let settle = spec.fault_time + 5.0 / spec.decay;
    for (s, v) in t.iter().zip(&q) {
        if *s >= settle {
            assert!((v[0] - 0.79).abs() <= 0.01 * 0.79);
            assert!((v[1] - 1.88).abs() <= 0.01 * 1.88);
        }
    }
    // something actually happened after the fault
    assert!(q.iter().any(|v| (v[1] - 1.88).abs() > 0.02));
}

#[test]
fn synthetic_inputs_are_seeded() {
    let spec = SyntheticSpec::default();
    let a = synth_inputs(&spec, &MachineParams::default(), 9, 3.0).unwrap();
    let b = synth_inputs(&spec, &MachineParams::default(), 9, 3.0).unwrap();
    let c = synth_inputs(&spec, &MachineParams::default(), 10, 3.0).unwrap();
    assert_eq!(a, b);
    assert_ne!(a.2, c.2);
    // continuous at the fault
    let t = frame_times(3.0);
    let k = t.iter().position(|s| *s >= spec.fault_time).unwrap();
    assert!((a.2[k + 1] - a.2[k]).amax() < 0.05);
}

#[test]
fn bus_equilibrium_satisfies_network() {
    let plant = PlantModel::order4(&MachineParams::default()).unwrap();
    let bus = InfiniteBus { v_inf: 1.0, x_e: 0.5 };
    let q = Vector2::new(0.79, 1.88);
    let x = bus_equilibrium4(&plant, &bus, &q).unwrap();
    let u = bus.currents(&plant, &x);
    let y = plant.y(&x, &u);
    assert!((y[0] - (1.0 - 0.5 * u[1])).abs() < 1e-12);
    assert!((y[1] - 0.5 * u[0]).abs() < 1e-12);
    assert!(plant.rhs(&x, &u, &q).amax() < 1e-10);
    assert!((u[0] - 0.79).abs() < 0.05, "real current tracks mechanical power");
    assert!(x[0] > 0.0 && x[0] < std::f64::consts::FRAC_PI_2 + 0.5);
}

#[test]
fn csv_roundtrip_and_grid_check() {
    let dir = tempfile::tempdir().unwrap();
    let rows: Vec<InputRow> = (0..10)
        .map(|k| InputRow { t: k as f64 / 60.0, i_r: 0.7, i_i: 0.2, t_m: 0.79, e_fd: 1.88 })
        .collect();
    let p = dir.path().join("in.csv");
    write_inputs_csv(&p, &rows).unwrap();
    let text = std::fs::read_to_string(&p).unwrap();
    assert!(text.starts_with("t,i_R,i_I,T_m,E_fd\n"));
    assert_eq!(read_inputs_csv(&p).unwrap(), rows);

    let mut bad = rows.clone();
    bad[4].t += 0.004;
    write_inputs_csv(&p, &bad).unwrap();
    assert!(matches!(read_inputs_csv(&p), Err(HarnessError::Config(_))));
}

// ---------------------------------------------------------------- config

#[test]
fn config_validation() {
    assert!(ScenarioConfig::default().validate().is_ok());
    let bad = ScenarioConfig { uncertainty: 1.5, ..Default::default() };
    assert!(bad.validate().is_err());
    let bad = ScenarioConfig { schema_version: 99, ..Default::default() };
    assert!(bad.validate().is_err());
    let bad = ScenarioConfig {
        edits: vec![Edit { channel: 3, t_start: 1.0, t_end: 2.0, kind: EditKind::Step, magnitude: 1.0 }],
        ..Default::default()
    };
    assert!(bad.validate().is_err());
    let bad = ScenarioConfig {
        edits: vec![Edit { channel: 1, t_start: 14.0, t_end: 20.0, kind: EditKind::Step, magnitude: 1.0 }],
        ..Default::default()
    };
    assert!(bad.validate().is_err());
}

#[test]
fn config_json_roundtrip_and_unknown_fields() {
    let cfg = ScenarioConfig {
        noise: NoiseConfig {
            process: NoiseSpec { kind: NoiseKind::Laplace { m: 0.0, s: 0.02 }, ..Default::default() },
            measurement: NoiseSpec { kind: NoiseKind::Cauchy { a: 0.0, b: 0.01 }, ..Default::default() },
        },
        ..case1(4)
    };
    let text = serde_json::to_string(&cfg).unwrap();
    let back: ScenarioConfig = serde_json::from_str(&text).unwrap();
    assert_eq!(back, cfg);
    assert_eq!(back.hash(), cfg.hash());
    assert_ne!(case1(5).hash(), cfg.hash());
    assert!(serde_json::from_str::<ScenarioConfig>(r#"{"schema_version":1,"bogus":1}"#).is_err());
    let minimal: ScenarioConfig = serde_json::from_str(r#"{"schema_version":1,"model":"order10"}"#).unwrap();
    assert_eq!(minimal.model, ModelOrder::Order10);
    assert_eq!(minimal.t_span, 15.0);
}

#[test]
fn config_file_forms_and_relative_paths() {
    let dir = tempfile::tempdir().unwrap();
    let one = dir.path().join("one.json");
    std::fs::write(&one, r#"{"schema_version":1,"case":"a","inputs":{"source":"csv","path":"data/in.csv"}}"#).unwrap();
    let cfgs = ScenarioConfig::load(&one).unwrap();
    assert_eq!(cfgs.len(), 1);
    let InputSource::Csv { path } = &cfgs[0].inputs else { panic!() };
    assert_eq!(path, &dir.path().join("data/in.csv"));

    let many = dir.path().join("many.json");
    std::fs::write(&many, r#"{"cases":[{"schema_version":1,"case":"a"},{"schema_version":1,"case":"b"}]}"#).unwrap();
    assert_eq!(ScenarioConfig::load(&many).unwrap().len(), 2);
    let arr = dir.path().join("arr.json");
    std::fs::write(&arr, r#"[{"schema_version":1,"case":"a"}]"#).unwrap();
    assert_eq!(ScenarioConfig::load(&arr).unwrap().len(), 1);
}

// ---------------------------------------------------------------- run_case

#[test]
fn zero_disturbance_zero_error() {
    let cfg = ScenarioConfig {
        inputs: InputSource::Synthetic(quiet_spec()),
        x_hat0: None,
        ..case1(1)
    };
    // start the estimators on the true state
    let (x0, _) = design_point(&cfg).unwrap();
    // exact prior: a wide P0 would let the sigma points see the curvature
    let mut cfg = ScenarioConfig { x_hat0: Some(x0.iter().copied().collect()), ..cfg };
    cfg.filter.p0_diag = Some(vec![1e-12; 4]);
    let rep = run_case(&cfg).unwrap();
    assert_eq!(rep.w_linf, 0.0);
    for e in &rep.estimators {
        let worst = e.e_norm.iter().copied().fold(0.0, f64::max);
        assert!(worst <= 1e-6, "{} drifted to {worst}", e.kind.name());
    }
}

#[test]
fn estimator_order_does_not_matter() {
    let noisy = |order: Vec<EstimatorKind>| ScenarioConfig {
        noise: NoiseConfig {
            process: NoiseSpec { kind: NoiseKind::Gaussian { cov: None, std_fraction: 0.05 }, ..Default::default() },
            measurement: NoiseSpec { kind: NoiseKind::Gaussian { cov: None, std_fraction: 0.05 }, ..Default::default() },
        },
        estimators: order,
        t_span: 4.0,
        stg_window: [2.0, 4.0],
        ..case1(2)
    };
    let a = run_case(&noisy(EstimatorKind::ALL.to_vec())).unwrap();
    let mut rev = EstimatorKind::ALL.to_vec();
    rev.reverse();
    let b = run_case(&noisy(rev)).unwrap();
    assert_eq!(a.plant, b.plant);
    for kind in EstimatorKind::ALL {
        let (x, y) = (a.result(kind).unwrap(), b.result(kind).unwrap());
        assert_eq!(x.x_hat, y.x_hat, "{}", kind.name());
        assert_eq!(x.rmse, y.rmse);
    }
}

#[test]
fn report_files_are_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ScenarioConfig {
        noise: NoiseConfig {
            measurement: NoiseSpec { kind: NoiseKind::Laplace { m: 0.0, s: 0.002 }, ..Default::default() },
            ..Default::default()
        },
        t_span: 3.0,
        stg_window: [2.0, 3.0],
        ..case1(8)
    };
    let a = run_case(&cfg).unwrap();
    let b = run_case(&cfg).unwrap();
    let fa = a.write(&dir.path().join("a")).unwrap();
    let fb = b.write(&dir.path().join("b")).unwrap();
    assert_eq!(fa.len(), 6);
    for (pa, pb) in fa.iter().zip(&fb) {
        if pa.extension().unwrap() == "csv" {
            assert_eq!(std::fs::read(pa).unwrap(), std::fs::read(pb).unwrap(), "{}", pa.display());
        }
    }
    let obs = std::fs::read_to_string(dir.path().join("a/observer.csv")).unwrap();
    let header = obs.lines().next().unwrap();
    assert_eq!(header, "t,x1,x2,x3,x4,x1_hat,x2_hat,x3_hat,x4_hat,e_norm,z_norm");
    assert_eq!(obs.lines().count(), 1 + 181);
    let summary: CaseSummary = serde_json::from_str(&std::fs::read_to_string(dir.path().join("a/summary.json")).unwrap()).unwrap();
    assert_eq!(summary.seed, 8);
    assert_eq!(summary.plot_scale, 5e3);
    assert_eq!(summary.config_hash, cfg.hash());
    assert_eq!(summary.estimators.len(), 4);
}

#[test]
fn case1_stg_holds_and_observer_converges() {
    let rep = run_case(&case1(0)).unwrap();
    let obs = rep.result(EstimatorKind::Observer).unwrap();
    assert!(obs.stg.pass, "{:?}", obs.stg);
    assert!(obs.e_norm[0] > 0.5);
    assert!(obs.mean_e_window < 0.01 * obs.e_norm[0]);
    assert!(rep.w_linf > 0.0 && rep.mu_bar > 0.0);
    // all series share the 60 Hz grid
    assert_eq!(rep.plant.times.len(), 901);
    for e in &rep.estimators {
        assert_eq!(e.x_hat.len(), 901);
        assert_eq!(e.z_norm.len(), 901);
    }
}

#[test]
fn uncertainty_moves_the_plant_only() {
    let base = ScenarioConfig { t_span: 5.0, stg_window: [3.0, 5.0], estimators: vec![EstimatorKind::Observer], ..case1(3) };
    let a = run_case(&base).unwrap();
    let b = run_case(&ScenarioConfig { uncertainty: 0.05, ..base.clone() }).unwrap();
    assert_eq!(a.mu_bar, b.mu_bar, "design must stay nominal");
    assert_ne!(a.plant.x, b.plant.x);
    assert!(b.result(EstimatorKind::Observer).unwrap().mean_e_window > a.result(EstimatorKind::Observer).unwrap().mean_e_window);
}

#[test]
fn csv_replay_reproduces_short_run() {
    let dir = tempfile::tempdir().unwrap();
    let base = ScenarioConfig { t_span: 1.0, stg_window: [0.5, 1.0], estimators: vec![EstimatorKind::Observer], ..case1(6) };
    let a = run_case(&base).unwrap();
    a.write(dir.path()).unwrap();
    let replay = ScenarioConfig {
        inputs: InputSource::Csv { path: dir.path().join("inputs.csv") },
        x0: Some(a.plant.x[0].iter().copied().collect()),
        x_hat0: Some(a.result(EstimatorKind::Observer).unwrap().x_hat[0].iter().copied().collect()),
        r: Some([a.r[0], a.r[1]]),
        ..base
    };
    let b = run_case(&replay).unwrap();
    // the replayed plant runs open loop and is unstable, so keep the span short
    for (xa, xb) in a.plant.x.iter().zip(&b.plant.x) {
        assert!((xa - xb).amax() < 1e-3, "{}", (xa - xb).amax());
    }
}

#[test]
fn csv_without_x0_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("in.csv");
    let rows: Vec<InputRow> = (0..=60).map(|k| InputRow { t: k as f64 / 60.0, i_r: 0.7, i_i: 0.2, t_m: 0.79, e_fd: 1.88 }).collect();
    write_inputs_csv(&p, &rows).unwrap();
    let cfg = ScenarioConfig { inputs: InputSource::Csv { path: p }, t_span: 1.0, stg_window: [0.5, 1.0], ..case1(0) };
    assert!(matches!(run_case(&cfg), Err(HarnessError::Config(_))));
    let long = ScenarioConfig { t_span: 2.0, x0: Some(vec![1.0, 377.0, 1.0, 0.5]), ..cfg };
    assert!(matches!(run_case(&long), Err(HarnessError::Config(_))));
}

#[test]
fn outside_box_warns() {
    let cfg = ScenarioConfig { op_box: Some(default_box4()), x_hat0: Some(vec![5.0, 377.0, 1.0, 0.5]), t_span: 2.0, stg_window: [1.0, 2.0], estimators: vec![EstimatorKind::Observer], ..case1(0) };
    let rep = run_case(&cfg).unwrap();
    assert!(rep.warnings.iter().any(|w| w.contains("x_hat0")), "{:?}", rep.warnings);
}

#[test]
fn order10_case_runs() {
    let mut cfg = ScenarioConfig { model: ModelOrder::Order10, t_span: 10.0, stg_window: [8.0, 10.0], ..case1(1) };
    cfg.synthesis.gamma_f = 0.01;
    cfg.synthesis.gamma_l = 0.01;
    let rep = run_case(&cfg).unwrap();
    assert_eq!(rep.plant.x[0].len(), 10);
    let obs = rep.result(EstimatorKind::Observer).unwrap();
    assert!(obs.e_norm.last().unwrap() < &(0.1 * obs.e_norm[0]));
}

#[test]
fn bounds_are_ordered() {
    let row = bounds_for(&case1(0)).unwrap();
    assert!(row.j_lower <= row.j_bar_refined + 1e-9);
    assert!(row.j_bar_refined <= row.j_bar * (1.0 + 1e-9));
}

// ---------------------------------------------------------------- cli

fn cli() -> Command {
    Command::new(env!("CARGO_BIN_EXE_linf-dse"))
}

fn write_config(dir: &std::path::Path, cfg: &ScenarioConfig) -> std::path::PathBuf {
    let p = dir.join("cfg.json");
    std::fs::write(&p, serde_json::to_string_pretty(cfg).unwrap()).unwrap();
    p
}

#[test]
fn cli_usage_errors_exit_2() {
    let out = cli().args(["run", "--bogus"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
    let out = cli().args(["run", "--config", "x.json", "--estimators", "kalman"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(cli().output().unwrap().status.code(), Some(2));
}

#[test]
fn cli_runtime_failure_exits_1() {
    let out = cli().args(["run", "--config", "/definitely/missing.json"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(!out.stderr.is_empty());
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.json");
    std::fs::write(&p, r#"{"schema_version":1,"uncertainty":3}"#).unwrap();
    let out = cli().args(["run", "--config"]).arg(&p).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn cli_run_writes_reports() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ScenarioConfig { t_span: 2.0, stg_window: [1.0, 2.0], ..case1(0) };
    let p = write_config(dir.path(), &cfg);
    let out_dir = dir.path().join("out");
    let out = cli()
        .args(["run", "--seed", "4", "--estimators", "observer,ekf", "--config"])
        .arg(&p)
        .arg("--out")
        .arg(&out_dir)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(out_dir.join("t1/observer.csv").exists());
    assert!(out_dir.join("t1/ekf.csv").exists());
    assert!(!out_dir.join("t1/ukf.csv").exists());
    let s: CaseSummary = serde_json::from_str(&std::fs::read_to_string(out_dir.join("t1/summary.json")).unwrap()).unwrap();
    assert_eq!(s.seed, 4);
}

#[test]
fn cli_synthesize_then_load_design() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ScenarioConfig { t_span: 2.0, stg_window: [1.0, 2.0], ..case1(0) };
    let p = write_config(dir.path(), &cfg);
    let out = cli().args(["synthesize", "--config"]).arg(&p).arg("--out").arg(dir.path()).output().unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let design = dir.path().join("t1/design.json");
    assert!(design.exists());

    let mut with = cfg.clone();
    with.synthesis.design = Some("t1/design.json".into());
    let p2 = dir.path().join("with.json");
    std::fs::write(&p2, serde_json::to_string(&with).unwrap()).unwrap();
    let loaded = ScenarioConfig::load(&p2).unwrap().remove(0);
    let a = run_case(&cfg).unwrap();
    let b = run_case(&loaded).unwrap();
    assert!((a.mu_bar - b.mu_bar).abs() <= 1e-12 * a.mu_bar);
    assert!(b.j_lower.is_some(), "synthesize stores the lower bound");
}

#[test]
fn cli_bench_and_bounds() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ScenarioConfig { t_span: 2.0, stg_window: [1.0, 2.0], ..case1(0) };
    let p = write_config(dir.path(), &cfg);
    let out = cli().args(["bench", "--repeats", "2", "--config"]).arg(&p).arg("--out").arg(dir.path()).output().unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let table = String::from_utf8_lossy(&out.stdout);
    for name in ["observer", "ekf", "ukf", "srukf"] {
        assert!(table.contains(name));
    }
    assert!(dir.path().join("bench.json").exists());
    let out = cli().args(["bounds", "--config"]).arg(&p).arg("--out").arg(dir.path()).output().unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("bounds.json").exists());
}
