//! Batch front end: scenario generation, motor-map fitting, closed-loop and
//! baseline runs, noise sweeps and report/plot-data emission.

use std::io::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use ecodrive::baseline::{baseline_run, compute_r_soc, r_m_ablation, SplitRatio};
use ecodrive::config::{write_atomic, RunConfig, RunMode};
use ecodrive::mpc::{audit_run, run_closed_loop, AuditReport, RunLog};
use ecodrive::powertrain::{fit_power_polynomial, generate_motor_map};
use ecodrive::prediction::NoiseConfig;
use ecodrive::scenario::{generate_corridor_scenario, load_scenario, Scenario};

#[derive(Parser)]
#[command(name = "ecodrive", version, about = "Dual-motor EV eco-driving simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic signalized-corridor scenario to CSV files.
    GenScenario(GenScenarioArgs),
    /// Generate the motor maps, fit their power polynomials, report RMSE.
    FitMaps(FitMapsArgs),
    /// Run one closed loop (optimal), a baseline replay, or the ablation.
    Run(RunArgs),
    /// Grid sweep over (sigma, mu, P_s) x seeds; emits one CSV row per run.
    SweepNoise(SweepArgs),
    /// Aggregate run outputs into a benefit table and plot-ready series.
    Report(ReportArgs),
}

#[derive(Args)]
struct CommonOverrides {
    /// Configuration file (TOML); defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Gaussian acceleration noise standard deviation (m/s^2).
    #[arg(long)]
    sigma: Option<f64>,
    /// Gaussian acceleration noise mean (m/s^2).
    #[arg(long)]
    mu: Option<f64>,
    /// Maximum phase-shift magnitude P_s (s).
    #[arg(long)]
    shift: Option<f64>,
}

#[derive(Args)]
struct GenScenarioArgs {
    #[command(flatten)]
    common: CommonOverrides,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct FitMapsArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: CommonOverrides,
    /// Scenario CSV (t,d_p,v_p,a_p).
    #[arg(long)]
    scenario: Option<PathBuf>,
    /// Signals CSV (id,d_sig,cycle_s,green_start_s,green_end_s).
    #[arg(long)]
    signals: Option<PathBuf>,
    /// Grade CSV (pos_m,phi_rad).
    #[arg(long)]
    grade: Option<PathBuf>,
    /// optimal | baseline | ablation
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: CommonOverrides,
    #[arg(long)]
    scenario: Option<PathBuf>,
    #[arg(long)]
    signals: Option<PathBuf>,
    #[arg(long)]
    grade: Option<PathBuf>,
    /// Comma-separated sigma values (overrides --sigma).
    #[arg(long)]
    sigmas: Option<String>,
    /// Comma-separated mu values.
    #[arg(long)]
    mus: Option<String>,
    /// Comma-separated P_s values (s).
    #[arg(long)]
    shifts: Option<String>,
    /// Number of seeds per grid cell.
    #[arg(long, default_value_t = 3)]
    seeds: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    /// Run output directory (containing *_summary.toml and *_runlog.csv).
    #[arg(long)]
    run_dir: PathBuf,
    /// Scenario CSV used for the runs (for the plot series).
    #[arg(long)]
    scenario: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

fn main() {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenScenario(a) => gen_scenario(a),
        Command::FitMaps(a) => fit_maps(a),
        Command::Run(a) => run(a),
        Command::SweepNoise(a) => sweep_noise(a),
        Command::Report(a) => report(a),
    };
    if let Err(e) = result {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn load_config(common: &CommonOverrides) -> anyhow::Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path).context("config")?,
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.mpc.seed = seed;
    }
    if let Some(sigma) = common.sigma {
        cfg.mpc.noise.sigma = sigma;
    }
    if let Some(mu) = common.mu {
        cfg.mpc.noise.mu = mu;
    }
    if let Some(shift) = common.shift {
        cfg.mpc.noise.p_s = shift;
    }
    Ok(cfg)
}

fn gen_scenario(args: GenScenarioArgs) -> anyhow::Result<()> {
    let cfg = load_config(&args.common)?;
    std::fs::create_dir_all(&args.out)?;
    let scenario = generate_corridor_scenario(cfg.mpc.seed, &cfg.corridor);
    scenario.validate().context("generated scenario")?;
    scenario.save(
        &args.out.join("scenario.csv"),
        Some(&args.out.join("signals.csv")),
        Some(&args.out.join("grade.csv")),
    )?;
    cfg.save(&args.out.join("config.toml"))?;
    println!(
        "scenario: {} samples, {} intersections, duration {:.1} s -> {}",
        scenario.samples.len(),
        scenario.intersections.len(),
        scenario.duration(),
        args.out.display()
    );
    Ok(())
}

fn fit_maps(args: FitMapsArgs) -> anyhow::Result<()> {
    let cfg = match &args.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    std::fs::create_dir_all(&args.out)?;
    let mut report = String::new();
    for (name, spec) in [("front", &cfg.front_motor), ("rear", &cfg.rear_motor)] {
        let map = generate_motor_map(spec)?;
        let fit = fit_power_polynomial(&map)?;
        map.write_csv(&args.out.join(format!("map_{name}.csv")))?;
        let peak = map.p_elec.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
        report.push_str(&format!(
            "{name}: kind={:?} rmse_w={:.3} peak_w={:.1} rmse_over_peak={:.5}\n",
            spec.kind,
            fit.rmse,
            peak,
            fit.rmse / peak
        ));
    }
    write_atomic(&args.out.join("rmse_report.txt"), report.as_bytes())?;
    print!("{report}");
    Ok(())
}

fn resolve_scenario(
    cfg: &RunConfig,
    scenario: &Option<PathBuf>,
    signals: &Option<PathBuf>,
    grade: &Option<PathBuf>,
) -> anyhow::Result<Scenario> {
    let scenario_path = scenario
        .clone()
        .or_else(|| cfg.paths.scenario.clone())
        .context("no scenario given (--scenario or [paths].scenario)")?;
    let signals_path = signals.clone().or_else(|| cfg.paths.signals.clone());
    let grade_path = grade.clone().or_else(|| cfg.paths.grade.clone());
    Ok(load_scenario(
        &scenario_path,
        signals_path.as_deref(),
        grade_path.as_deref(),
        cfg.vehicle.v_max,
    )?)
}

fn summary_toml(
    label: &str,
    log: &RunLog,
    audit: Option<&AuditReport>,
    extra: &[(String, String)],
) -> String {
    let mut s = String::new();
    s.push_str(&format!("label = \"{label}\"\n"));
    s.push_str(&format!("soc0 = {}\n", log.soc0));
    s.push_str(&format!("final_soc = {}\n", log.final_soc()));
    s.push_str(&format!("duration_s = {}\n", log.duration()));
    s.push_str(&format!("traction_energy_j = {}\n", log.traction_energy_j()));
    let times = log.solve_times();
    if !times.is_empty() {
        let mean = times.iter().sum::<f64>() / times.len() as f64;
        s.push_str(&format!("mean_solve_time_s = {mean}\n"));
        s.push_str(&format!("median_solve_time_s = {}\n", log.median_solve_time()));
    }
    if let Some(a) = audit {
        s.push_str(&format!("collisions = {}\n", a.collisions));
        s.push_str(&format!("red_light_crossings = {}\n", a.red_light_crossings));
        s.push_str(&format!("max_scaled_violation = {}\n", a.max_scaled_violation));
        s.push_str(&format!("min_gap_m = {}\n", a.min_gap_m));
        s.push_str(&format!("max_s1 = {}\n", a.max_s1));
        s.push_str(&format!("max_s2 = {}\n", a.max_s2));
    }
    for (k, v) in extra {
        s.push_str(&format!("{k} = {v}\n"));
    }
    s
}

fn run(args: RunArgs) -> anyhow::Result<()> {
    let mut cfg = load_config(&args.common)?;
    if let Some(mode) = &args.mode {
        cfg.mode = mode.parse()?;
    }
    std::fs::create_dir_all(&args.out)?;
    let scenario = resolve_scenario(&cfg, &args.scenario, &args.signals, &args.grade)?;
    let model = cfg.build_model()?;
    cfg.save(&args.out.join("config.toml"))?;

    match cfg.mode {
        RunMode::Baseline => {
            let log = baseline_run(&scenario, &model, &SplitRatio::default(), cfg.mpc.initial_soc)?;
            log.write_csv(&args.out.join("baseline_runlog.csv"))?;
            let body = summary_toml("baseline", &log, None, &[]);
            write_atomic(&args.out.join("baseline_summary.toml"), body.as_bytes())?;
            println!("baseline: final_soc {:.6}", log.final_soc());
        }
        RunMode::Optimal | RunMode::Ablation => {
            let log = run_closed_loop(&scenario, &cfg.mpc, &model)?;
            let audit = audit_run(&log, &scenario, &model, &cfg.mpc, 1e-6);
            let mut extra = Vec::new();
            if cfg.mode == RunMode::Ablation {
                let (e_rule, e_opt, r_m) = r_m_ablation(&log, &model, &SplitRatio::default())?;
                extra.push(("rule_energy_j".to_string(), e_rule.to_string()));
                extra.push(("optimal_energy_j".to_string(), e_opt.to_string()));
                extra.push(("r_m_percent".to_string(), r_m.to_string()));
            }
            log.write_csv(&args.out.join("optimal_runlog.csv"))?;
            let body = summary_toml("optimal", &log, Some(&audit), &extra);
            write_atomic(&args.out.join("optimal_summary.toml"), body.as_bytes())?;
            if !audit.safety_ok() {
                bail!(
                    "safety: run finished with {} collisions, {} red-light crossings",
                    audit.collisions,
                    audit.red_light_crossings
                );
            }
            println!(
                "optimal: final_soc {:.6}, median solve {:.3} s",
                log.final_soc(),
                log.median_solve_time()
            );
        }
    }
    Ok(())
}

fn parse_list(raw: &Option<String>, fallback: f64) -> anyhow::Result<Vec<f64>> {
    match raw {
        None => Ok(vec![fallback]),
        Some(s) => s
            .split(',')
            .map(|tok| {
                tok.trim()
                    .parse::<f64>()
                    .with_context(|| format!("bad number {tok:?} in list"))
            })
            .collect(),
    }
}

fn sweep_noise(args: SweepArgs) -> anyhow::Result<()> {
    let cfg = load_config(&args.common)?;
    std::fs::create_dir_all(&args.out)?;
    let scenario = resolve_scenario(&cfg, &args.scenario, &args.signals, &args.grade)?;
    let model = cfg.build_model()?;
    cfg.save(&args.out.join("config.toml"))?;

    let sigmas = parse_list(&args.sigmas, cfg.mpc.noise.sigma)?;
    let mus = parse_list(&args.mus, cfg.mpc.noise.mu)?;
    let shifts = parse_list(&args.shifts, cfg.mpc.noise.p_s)?;

    let base = baseline_run(&scenario, &model, &SplitRatio::default(), cfg.mpc.initial_soc)?;
    let soc_p = base.final_soc();

    let mut cells = Vec::new();
    for &sigma in &sigmas {
        for &mu in &mus {
            for &p_s in &shifts {
                for seed in 0..args.seeds {
                    cells.push((sigma, mu, p_s, seed));
                }
            }
        }
    }

    let rows: Vec<anyhow::Result<String>> = cells
        .par_iter()
        .map(|&(sigma, mu, p_s, seed)| {
            let mut mpc = cfg.mpc.clone();
            mpc.noise = NoiseConfig {
                sigma,
                mu,
                p_s,
                seed,
                order: cfg.mpc.noise.order,
            };
            mpc.seed = cfg.mpc.seed.wrapping_add(seed);
            let log = run_closed_loop(&scenario, &mpc, &model)?;
            let audit = audit_run(&log, &scenario, &model, &mpc, 1e-6);
            let r_soc = compute_r_soc(log.final_soc(), soc_p, mpc.initial_soc)?;
            Ok(format!(
                "{sigma},{mu},{p_s},{seed},{r_soc},{},{},{},{}",
                log.final_soc(),
                log.median_solve_time(),
                audit.collisions,
                audit.red_light_crossings
            ))
        })
        .collect();

    let mut body =
        String::from("sigma,mu,p_s,seed,r_soc_percent,final_soc,median_solve_s,collisions,red_crossings\n");
    for row in rows {
        body.push_str(&row?);
        body.push('\n');
    }
    write_atomic(&args.out.join("sweep.csv"), body.as_bytes())?;
    println!("sweep: {} runs -> {}", cells.len(), args.out.join("sweep.csv").display());
    Ok(())
}

fn read_summary(path: &Path) -> anyhow::Result<toml::Table> {
    let raw = std::fs::read_to_string(path)
        .with_context(|| format!("missing summary {}", path.display()))?;
    Ok(raw.parse::<toml::Table>()?)
}

fn summary_f64(t: &toml::Table, key: &str) -> Option<f64> {
    t.get(key)
        .and_then(|v| v.as_float().or(v.as_integer().map(|i| i as f64)))
}

fn report(args: ReportArgs) -> anyhow::Result<()> {
    std::fs::create_dir_all(&args.out)?;
    let opt = read_summary(&args.run_dir.join("optimal_summary.toml"))?;
    let base = read_summary(&args.run_dir.join("baseline_summary.toml"))?;

    let soc0 = summary_f64(&opt, "soc0").context("soc0")?;
    let soc_e = summary_f64(&opt, "final_soc").context("final_soc")?;
    let soc_p = summary_f64(&base, "final_soc").context("baseline final_soc")?;
    let r_soc = compute_r_soc(soc_e, soc_p, soc0)?;
    let r_m = summary_f64(&opt, "r_m_percent");
    let mean_solve = summary_f64(&opt, "mean_solve_time_s").unwrap_or(0.0);
    let period = summary_f64(&opt, "duration_s").unwrap_or(0.0);

    let mut table = String::from("scenario,r_soc_percent,r_m_percent,avg_sol_time_s,period_s\n");
    table.push_str(&format!(
        "{},{r_soc},{},{mean_solve},{period}\n",
        args.run_dir.display(),
        r_m.map_or(String::new(), |v| v.to_string()),
    ));
    write_atomic(&args.out.join("report.csv"), table.as_bytes())?;

    // Plot-ready series: ego log joined with the preceding-vehicle truth.
    if let Some(scenario_path) = &args.scenario {
        let scenario = load_scenario(scenario_path, None, None, f64::INFINITY)?;
        let runlog_path = args.run_dir.join("optimal_runlog.csv");
        let raw = std::fs::read_to_string(&runlog_path)
            .with_context(|| format!("missing {}", runlog_path.display()))?;
        let mut out = std::io::BufWriter::new(std::fs::File::create(args.out.join("series.csv"))?);
        writeln!(out, "t,d_ego,v_ego,soc_ego,t_f,t_r,p_bat,f_b,d_prec,v_prec")?;
        for line in raw.lines().skip(1) {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() < 11 {
                continue;
            }
            let t: f64 = f[0].parse()?;
            if let Ok(idx) = scenario.index_at(t) {
                let s = &scenario.samples[idx];
                writeln!(
                    out,
                    "{},{},{},{},{},{},{},{},{},{}",
                    t, f[1], f[2], f[3], f[5], f[6], f[7], f[8], s.d_p, s.v_p
                )?;
            }
        }
    }
    println!(
        "report: R_SOC {r_soc:.2}% -> {}",
        args.out.join("report.csv").display()
    );
    Ok(())
}
