//! `polytube`: synthesis, invariant ensembles, planning, simulation and the
//! acceptance audit from the command line.
//!
//! Exit codes: 0 success, 2 validation failure, 3 infeasibility, 4 numerical failure.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use log::info;
use nalgebra::DVector;
use serde_json::{json, Value};

use polytube::ensemble::{self, IntersectionMode};
use polytube::figure::{self, FigureData};
use polytube::io::{self, Scenario, ScenarioFile, TemplateFile};
use polytube::ocp::{self, OcpOptions, SteadyState, TubeSolution, TubeStatus};
use polytube::qp::Settings;
use polytube::sim::{self, ClosedLoop, RunStatus, SimConfig};
use polytube::template::{ConsistencyReport, SensorTemplate};
use polytube::Error;

const SVG_SIZE: (f64, f64) = (640.0, 480.0);

#[derive(Parser, Debug)]
#[command(name = "polytube", version, about = "Polytopic dual MPC with configuration-constrained templates")]
struct Cli {
    /// Scenario JSON; the bundled case study when omitted.
    #[arg(long, global = true)]
    scenario: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Single simulation seed (overrides the scenario's seed list) or audit RNG seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Audit tolerance.
    #[arg(long, global = true, default_value_t = 1e-6)]
    tol: f64,
    /// Sensor intersection used by the one-step audits.
    #[arg(long, global = true, value_enum, default_value_t = Mode::Exact)]
    mode: Mode,
    /// Plan and simulate with the rigid (central trajectory) reduction.
    #[arg(long, global = true)]
    rigid: bool,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Validate a template and synthesize its vertex maps and extreme set.
    Synth {
        /// Template JSON (a bare template block); defaults to the scenario's.
        #[arg(long)]
        template: Option<PathBuf>,
    },
    /// Compute the invariant ensemble and its figure.
    Invariant,
    /// Solve the tube problem once from the scenario's initial set.
    Plan,
    /// Closed-loop receding-horizon simulation.
    Simulate,
    /// Run the acceptance audit on the case study.
    Verify {
        /// Comma-separated criterion numbers (all by default).
        #[arg(long, value_delimiter = ',')]
        only: Vec<u8>,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Mode {
    Exact,
    Relaxed,
}

impl From<Mode> for IntersectionMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Exact => IntersectionMode::Exact,
            Mode::Relaxed => IntersectionMode::Relaxed,
        }
    }
}

/// A failure carrying its exit code.
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn validation(message: impl Into<String>) -> Self {
        Failure { code: 2, message: message.into() }
    }

    fn infeasible(message: impl Into<String>) -> Self {
        Failure { code: 3, message: message.into() }
    }

    fn numerical(message: impl Into<String>) -> Self {
        Failure { code: 4, message: message.into() }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Infeasible(_)
            | Error::InfeasibleWeights(_)
            | Error::EmptyEnsemble
            | Error::EmptyInformationSet
            | Error::EmptyPolytope => 3,
            Error::Numerical(_) | Error::Unbounded | Error::DegenerateVertex { .. } | Error::NoInteriorPoint => 4,
            _ => 2,
        };
        Failure { code, message: e.to_string() }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::validation(e.to_string())
    }
}

type CmdResult = Result<(), Failure>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().filter_or("POLYTUBE_LOG", "warn")).init();
    let cli = Cli::parse();
    let res = fs::create_dir_all(&cli.out).map_err(Failure::from).and_then(|_| match &cli.cmd {
        Cmd::Synth { template } => synth(&cli, template.as_deref()),
        Cmd::Invariant => invariant(&cli),
        Cmd::Plan => plan(&cli),
        Cmd::Simulate => simulate(&cli),
        Cmd::Verify { only } => verify(&cli, only),
    });
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn scenario_file(cli: &Cli) -> Result<ScenarioFile, Failure> {
    match &cli.scenario {
        Some(p) => Ok(ScenarioFile::read(p)?),
        None => Ok(io::case_study_scenario()),
    }
}

fn load_scenario(cli: &Cli) -> Result<Scenario, Failure> {
    let file = scenario_file(cli)?;
    let report = file.template.validate()?;
    if !report.passed() {
        return Err(consistency_failure(&report));
    }
    Ok(file.load()?)
}

fn consistency_failure(report: &ConsistencyReport) -> Failure {
    let failing: Vec<String> = report
        .checks
        .iter()
        .filter(|c| c.required && !c.passed)
        .map(|c| format!("{} (residual {:e})", c.name, c.residual))
        .collect();
    Failure::validation(format!("template consistency failed: {}", failing.join(", ")))
}

fn write_json(path: &Path, v: &Value) -> CmdResult {
    let text = serde_json::to_string_pretty(v).map_err(|e| Failure::numerical(e.to_string()))?;
    fs::write(path, text + "\n")?;
    info!("wrote {}", path.display());
    Ok(())
}

fn write_figure(out: &Path, stem: &str, fig: &FigureData) -> CmdResult {
    write_json(&out.join(format!("{stem}.json")), &serde_json::to_value(fig).map_err(|e| Failure::numerical(e.to_string()))?)?;
    fs::write(out.join(format!("{stem}.svg")), fig.to_svg(SVG_SIZE.0, SVG_SIZE.1))?;
    Ok(())
}

fn vec_json(v: &DVector<f64>) -> Value {
    json!(v.as_slice())
}

fn manifest(cli: &Cli, command: &str, files: &[&str]) -> CmdResult {
    write_json(
        &cli.out.join("manifest.json"),
        &json!({
            "command": command,
            "tube_csv_version": io::TUBE_CSV_VERSION,
            "trace_csv_version": sim::TRACE_CSV_VERSION,
            "files": files,
        }),
    )
}

fn synth(cli: &Cli, template: Option<&Path>) -> CmdResult {
    let (tfile, scenario) = match template {
        Some(p) => {
            let text = fs::read_to_string(p)?;
            let t: TemplateFile = serde_json::from_str(&text).map_err(|e| Failure::validation(e.to_string()))?;
            (t, None)
        }
        None => {
            let s = scenario_file(cli)?;
            (s.template.clone(), Some(s))
        }
    };
    let raw = tfile.validate()?;
    let mut report = json!({ "raw_checks": &raw.checks });
    if !raw.passed() {
        write_json(&cli.out.join("synth_report.json"), &report)?;
        for c in &raw.checks {
            println!("{:<12} residual {:e}{}", c.name, c.residual, if c.required && !c.passed { "  FAILED" } else { "" });
        }
        return Err(consistency_failure(&raw));
    }
    let meta = tfile.load()?;
    let checks = polytube::template::validate_consistency(meta.family(), &meta);
    let fam = meta.family();
    let dims = json!({
        "n": fam.dim(),
        "m": fam.num_facets(),
        "nu": fam.num_vertices(),
        "l": meta.num_params(),
        "l1": meta.sensor_rows(),
        "nu_bar": meta.num_meta_vertices(),
        "extreme": meta.num_extreme(),
    });
    report["checks"] = json!(&checks.checks);
    report["dimensions"] = dims;
    report["passed"] = json!(checks.passed());
    write_json(&cli.out.join("synth_report.json"), &report)?;
    let bundle = TemplateFile::from_meta(&meta);
    write_json(&cli.out.join("template_bundle.json"), &serde_json::to_value(&bundle).map_err(|e| Failure::numerical(e.to_string()))?)?;
    let mut files = vec!["synth_report.json", "template_bundle.json"];
    if let Some(mut s) = scenario {
        s.template = bundle;
        fs::write(cli.out.join("scenario.json"), s.to_json()? + "\n")?;
        files.push("scenario.json");
    }
    manifest(cli, "synth", &files)?;
    for c in &checks.checks {
        let tag = match (c.passed, c.required) {
            (true, _) => "ok",
            (false, true) => "FAILED",
            (false, false) => "not enforced",
        };
        println!("{:<12} residual {:.1e}  {tag}", c.name, c.residual);
    }
    println!(
        "m={} ν={} l={} ν̄={} |𝕁|={}",
        fam.num_facets(),
        fam.num_vertices(),
        meta.num_params(),
        meta.num_meta_vertices(),
        meta.num_extreme()
    );
    if !checks.passed() {
        return Err(consistency_failure(&checks));
    }
    Ok(())
}

fn steady_state(sc: &Scenario) -> Result<SteadyState, Failure> {
    Ok(ocp::solve_invariant(&sc.system, &sc.cost, &sc.meta, &Settings::precise())?)
}

fn invariant(cli: &Cli) -> CmdResult {
    let sc = load_scenario(cli)?;
    let steady = steady_state(&sc)?;
    let audit = ocp::audit_tube(&sc.system, &sc.meta, &steady.as_tube(), None, None);
    let step = ensemble::ensemble_step(&sc.meta, &sc.system, &steady.z, &steady.u, cli.mode.into())?;
    let growth = (&step - &steady.z).max();
    let fig = figure::invariant_figure(&sc.meta, &steady)?;
    let hull_vertices = fig.layer(figure::Style::ExtrinsicHull).map_or(0, |l| l.polygons.iter().map(Vec::len).sum());
    let passed = audit.passed(cli.tol) && growth <= cli.tol;
    write_json(
        &cli.out.join("steady.json"),
        &json!({
            "z_s": vec_json(&steady.z),
            "zeta_s": vec_json(&steady.zeta),
            "xi_s": steady.xi.iter().map(vec_json).collect::<Vec<_>>(),
            "u_s": steady.u.iter().map(vec_json).collect::<Vec<_>>(),
            "objective": steady.objective,
            "audit": audit,
            "step_growth": growth,
            "mode": format!("{:?}", cli.mode).to_lowercase(),
            "hull_vertices": hull_vertices,
            "passed": passed,
        }),
    )?;
    write_figure(&cli.out, "invariant_figure", &fig)?;
    manifest(cli, "invariant", &["steady.json", "invariant_figure.json", "invariant_figure.svg"])?;
    println!("z_s = {:?}", steady.z.as_slice());
    println!("audit max violation {:.1e}, one-step growth {:.1e}, hull vertices {hull_vertices}", audit.max_violation(), growth);
    if !passed {
        return Err(Failure::numerical(format!("invariance audit failed at tolerance {:e}", cli.tol)));
    }
    Ok(())
}

fn solve_plan(sc: &Scenario, steady: &SteadyState, yhat: &DVector<f64>, rigid: bool) -> Result<TubeSolution, Failure> {
    let settings = Settings::precise();
    let horizon = sc.run.horizon;
    if rigid {
        let r = ocp::build_rigid(&sc.system, &sc.cost, &sc.meta, steady, horizon, yhat)?;
        let p = r.solve(&settings)?;
        let mut tube = ocp::lift_rigid(&sc.meta, steady, &p);
        tube.status = p.status;
        tube.objective = p.objective + r.constant();
        Ok(tube)
    } else {
        let opts = OcpOptions::default().with_terminal(steady.z.clone());
        Ok(ocp::build_dual_ocp(&sc.system, &sc.cost, &sc.meta, horizon, yhat, &opts)?.solve(&settings)?)
    }
}

fn status_failure(status: TubeStatus) -> Failure {
    match status {
        TubeStatus::Infeasible => Failure::infeasible("tube problem is infeasible from the initial set"),
        s => Failure::numerical(format!("tube solve ended with {s:?}")),
    }
}

fn plan(cli: &Cli) -> CmdResult {
    let sc = load_scenario(cli)?;
    let steady = steady_state(&sc)?;
    let yhat = sc.initial_parameter()?;
    let tube = solve_plan(&sc, &steady, &yhat, cli.rigid)?;
    if !tube.is_solved() {
        return Err(status_failure(tube.status));
    }
    let audit = ocp::audit_tube(&sc.system, &sc.meta, &tube, Some(&yhat), Some(&steady.z));
    let sensor = SensorTemplate { vbar: sc.system.vbar.clone() };
    // each stage: ζ_k dominates the sensor intersection of z_k, and its
    // propagation under the stage controls stays within z_{k+1}
    let mut step_growth = f64::NEG_INFINITY;
    for k in 0..tube.horizon() {
        let cut = ensemble::intersect_sensor(&sc.meta, &tube.z[k], &sensor, cli.mode.into())?;
        step_growth = step_growth.max((&cut - &tube.zeta[k]).max());
        let xis = ensemble::propagate_extreme(&sc.meta, &sc.system, &tube.zeta[k], &tube.u[k])?;
        step_growth = step_growth.max((ensemble::max_z(sc.meta.ensemble(), &xis) - &tube.z[k + 1]).max());
    }
    let zeta0 = ensemble::intersect_sensor(&sc.meta, &tube.z[0], &sensor, cli.mode.into())?;
    let fig = figure::plan_figure(&sc.meta, &sc.system, &tube, Some(&steady.z))?;
    let active_stages: Vec<usize> =
        (0..tube.horizon()).filter(|&k| !figure::active_vertices(&sc.meta, &sc.system, &tube.zeta[k]).is_empty()).collect();
    let mut csv = Vec::new();
    io::write_tube_csv(&tube, &mut csv)?;
    fs::write(cli.out.join("tube.csv"), csv)?;
    write_figure(&cli.out, "plan_figure", &fig)?;
    let passed = audit.passed(cli.tol) && step_growth <= cli.tol;
    write_json(
        &cli.out.join("plan.json"),
        &json!({
            "objective": tube.objective,
            "status": tube.status,
            "rigid": cli.rigid,
            "audit": audit,
            "step_growth": step_growth,
            "zeta0": vec_json(&zeta0),
            "active_stages": active_stages,
            "passed": passed,
        }),
    )?;
    manifest(cli, "plan", &["tube.csv", "plan.json", "plan_figure.json", "plan_figure.svg"])?;
    println!("objective {:.6}, audit max violation {:.1e}, active stages {active_stages:?}", tube.objective, audit.max_violation());
    if !passed {
        return Err(Failure::numerical(format!("tube audit failed at tolerance {:e}", cli.tol)));
    }
    Ok(())
}

fn simulate(cli: &Cli) -> CmdResult {
    let sc = load_scenario(cli)?;
    let steady = steady_state(&sc)?;
    let yhat = sc.initial_parameter()?;
    let (lo, hi) = sc.initial_box()?;
    let seeds: Vec<u64> = match cli.seed {
        Some(s) => vec![s],
        None => sc.run.seeds.clone(),
    };
    let base = SimConfig {
        steps: sc.run.steps,
        horizon: sc.run.horizon,
        disturbance: sc.run.disturbance,
        noise: sc.run.noise,
        rigid: cli.rigid,
        ..SimConfig::default()
    };
    let lp = ClosedLoop { sys: &sc.system, cost: &sc.cost, meta: &sc.meta, steady: &steady, settings: Settings::mpc() };
    let traces = sim::run_batch(&lp, &lo, &hi, &yhat, &base, &seeds)?;
    let mut files = vec!["summary.json".to_string()];
    let mut summaries = Vec::new();
    for t in &traces {
        let name = format!("trace_seed{}.csv", t.seed);
        let mut buf = Vec::new();
        t.write_csv(&mut buf)?;
        fs::write(cli.out.join(&name), buf)?;
        files.push(name);
        let s = t.summary();
        println!(
            "seed {:>3}: {:?}, {} steps, min margin {:.4}, containment violations {}",
            s.seed, s.status, s.steps, s.min_state_margin, s.containment_violations
        );
        summaries.push(s);
    }
    let all_feasible = summaries.iter().all(|s| s.feasible && s.containment_violations == 0);
    write_json(&cli.out.join("summary.json"), &json!({ "runs": summaries, "all_feasible": all_feasible, "rigid": cli.rigid }))?;
    let names: Vec<&str> = files.iter().map(String::as_str).collect();
    manifest(cli, "simulate", &names)?;
    if let Some(bad) = summaries.iter().find(|s| !s.feasible) {
        return Err(match &bad.status {
            RunStatus::NumericalFailure { step, message } => Failure::numerical(format!("seed {} step {step}: {message}", bad.seed)),
            s => Failure::infeasible(format!("seed {}: {s:?}", bad.seed)),
        });
    }
    if !all_feasible {
        return Err(Failure::numerical("information sets lost the true state"));
    }
    Ok(())
}

fn verify(cli: &Cli, only: &[u8]) -> CmdResult {
    let mut cfg = polytube_verify::VerifyConfig::default();
    if let Some(s) = cli.seed {
        cfg.rng_seed = s;
    }
    let ctx = polytube_verify::Context::new(cfg)?;
    let ids = if only.is_empty() { polytube_verify::CRITERIA.to_vec() } else { only.to_vec() };
    let mut unexpected = 0;
    let mut rows = Vec::new();
    for id in ids {
        let o = polytube_verify::run(&ctx, &[id]).remove(0);
        println!("{o}");
        unexpected += usize::from(o.unexpected_failure());
        rows.push(json!({
            "id": o.id,
            "title": o.title,
            "passed": o.passed,
            "detail": o.detail,
            "known_deviation": o.known_deviation,
            "elapsed": o.elapsed,
        }));
    }
    write_json(&cli.out.join("verify.json"), &json!({ "criteria": rows }))?;
    if unexpected > 0 {
        return Err(Failure::validation(format!("{unexpected} criteria failed without a documented deviation")));
    }
    Ok(())
}
