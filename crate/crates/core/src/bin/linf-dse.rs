use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use linf_dse::harness::{
    bounds_for, design_for, design_point, run_case, synthesis_input, BoundsRow, CaseReport, EstimatorKind,
    HarnessError, ScenarioConfig, SynthesisConfig,
};

#[derive(Parser)]
#[command(name = "linf-dse", version, about = "Robust L-infinity observer design and estimator benchmarks")]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Scenario config (JSON object, array, or {"cases": [...]})
    #[arg(long)]
    config: PathBuf,
    /// Override the scenario seed
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Comma-separated subset of observer,ekf,ukf,srukf
    #[arg(long, value_delimiter = ',', value_parser = parse_estimator)]
    estimators: Option<Vec<EstimatorKind>>,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize the observer gain and write design.json
    Synthesize(Common),
    /// Run scenarios and write trajectories plus a summary
    Run(Common),
    /// Repeat scenarios over consecutive seeds and tabulate RMSE and wall time
    Bench {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 5)]
        repeats: u64,
    },
    /// Upper bound, refined upper bound and relaxation lower bound
    Bounds(Common),
}

fn parse_estimator(s: &str) -> Result<EstimatorKind, String> {
    EstimatorKind::parse(s).ok_or_else(|| format!("unknown estimator '{s}' (observer, ekf, ukf, srukf)"))
}

fn load(c: &Common) -> Result<Vec<ScenarioConfig>, HarnessError> {
    let mut cfgs = ScenarioConfig::load(&c.config)?;
    for cfg in &mut cfgs {
        if let Some(s) = c.seed {
            cfg.seed = s;
        }
        if let Some(e) = &c.estimators {
            cfg.estimators = e.clone();
        }
    }
    Ok(cfgs)
}

fn write_json<T: serde::Serialize>(path: &Path, v: &T) -> Result<(), HarnessError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|source| HarnessError::Io { path: dir.into(), source })?;
    }
    std::fs::write(path, serde_json::to_string_pretty(v)?).map_err(|source| HarnessError::Io { path: path.into(), source })
}

fn synthesize(c: &Common) -> Result<(), HarnessError> {
    for cfg in load(c)? {
        let nominal = cfg.nominal_model()?;
        let synthesis = SynthesisConfig { design: None, lower_bound: true, ..cfg.synthesis.clone() };
        let cfg = ScenarioConfig { synthesis, ..cfg };
        let (x0, u0) = design_point(&cfg)?;
        let (inp, _) = synthesis_input(&cfg, &nominal, &x0, &u0)?;
        let d = design_for(&cfg, &inp)?;
        let path = c.out.join(&cfg.case).join("design.json");
        write_json(&path, &d.design.to_record(d.j_lower))?;
        println!(
            "{}: mu_bar={:.6e} J={:.6e}{} -> {}",
            cfg.case,
            d.design.mu_bar,
            d.design.j_bar,
            d.j_lower.map(|j| format!(" J_lower={j:.6e}")).unwrap_or_default(),
            path.display()
        );
    }
    Ok(())
}

fn run_all(cfgs: &[ScenarioConfig]) -> Vec<Result<CaseReport, HarnessError>> {
    cfgs.par_iter().map(run_case).collect()
}

fn run(c: &Common) -> Result<(), HarnessError> {
    let cfgs = load(c)?;
    let mut failed = None;
    for (cfg, rep) in cfgs.iter().zip(run_all(&cfgs)) {
        match rep {
            Ok(rep) => {
                for w in &rep.warnings {
                    eprintln!("warning: {}: {w}", cfg.case);
                }
                let dir = c.out.join(&cfg.case);
                rep.write(&dir)?;
                println!("{} (seed {}): mu_bar={:.4e} ||w||={:.4e}", cfg.case, cfg.seed, rep.mu_bar, rep.w_linf);
                for e in &rep.estimators {
                    println!(
                        "  {:<8} rmse={:<12.6} time={:<10.4}s max z[window]={:.3e} stg={}",
                        e.kind.name(),
                        e.rmse,
                        e.wall_time,
                        e.stg.max_z,
                        if e.stg.pass { "pass" } else { "fail" }
                    );
                }
            }
            Err(e) => {
                eprintln!("{}: {e}", cfg.case);
                failed.get_or_insert(e);
            }
        }
    }
    failed.map_or(Ok(()), Err)
}

#[derive(serde::Serialize)]
struct BenchRow {
    case: String,
    estimator: String,
    runs: usize,
    mean_rmse: f64,
    mean_wall_time_s: f64,
}

fn bench(c: &Common, repeats: u64) -> Result<(), HarnessError> {
    let base = load(c)?;
    let cfgs: Vec<ScenarioConfig> = base
        .iter()
        .flat_map(|cfg| (0..repeats).map(move |i| ScenarioConfig { seed: cfg.seed + i, ..cfg.clone() }))
        .collect();
    // sequential so wall times are not skewed by sharing cores
    let reports = cfgs.iter().map(run_case).collect::<Result<Vec<_>, _>>()?;
    let mut rows = Vec::new();
    println!("{:<12} {:<8} {:>12} {:>12}", "case", "filter", "rmse", "time [s]");
    for cfg in &base {
        let mine: Vec<&CaseReport> = reports.iter().filter(|r| r.config.case == cfg.case).collect();
        for kind in &cfg.estimators {
            let vals: Vec<(f64, f64)> = mine
                .iter()
                .filter_map(|r| r.result(*kind))
                .map(|e| (e.rmse, e.wall_time))
                .collect();
            let n = vals.len().max(1) as f64;
            let row = BenchRow {
                case: cfg.case.clone(),
                estimator: kind.name().into(),
                runs: vals.len(),
                mean_rmse: vals.iter().map(|v| v.0).sum::<f64>() / n,
                mean_wall_time_s: vals.iter().map(|v| v.1).sum::<f64>() / n,
            };
            println!("{:<12} {:<8} {:>12.6} {:>12.4}", row.case, row.estimator, row.mean_rmse, row.mean_wall_time_s);
            rows.push(row);
        }
    }
    write_json(&c.out.join("bench.json"), &rows)
}

fn bounds(c: &Common) -> Result<(), HarnessError> {
    let cfgs = load(c)?;
    let rows: Vec<BoundsRow> = cfgs.par_iter().map(bounds_for).collect::<Result<_, _>>()?;
    println!("{:<12} {:>8} {:>8} {:>12} {:>12} {:>12} {:>12}", "case", "gf", "gl", "J_lower", "J_bar", "J_sca", "mu_bar");
    for r in &rows {
        println!(
            "{:<12} {:>8.3} {:>8.3} {:>12.4e} {:>12.4e} {:>12.4e} {:>12.4e}",
            r.case, r.gamma_f, r.gamma_l, r.j_lower, r.j_bar, r.j_bar_refined, r.mu_bar
        );
    }
    write_json(&c.out.join("bounds.json"), &rows)
}

fn main() -> ExitCode {
    // clap exits with status 2 on usage errors
    let cli = Cli::parse();
    let res = match &cli.cmd {
        Command::Synthesize(c) => synthesize(c),
        Command::Run(c) => run(c),
        Command::Bench { common, repeats } => bench(common, *repeats),
        Command::Bounds(c) => bounds(c),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
