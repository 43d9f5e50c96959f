use std::path::{Path, PathBuf};

use log::info;
use mobility_core::coordination::{
    build_intersection_scenario, simulate_team, solve_planning, write_trajectory_log,
    CoordinationError, IntersectionParams, SimulationConfig, SimulationStats, TeamModel,
};
use mobility_core::mechanism::{
    run_market, verify_incentive_compatibility, verify_individual_rationality,
    verify_weak_budget_balance, MechanismError, MisreportGrid, Property, PropertyReport,
    SubclassRun,
};
use mobility_core::{network::ScenarioError, PaymentMode, PaymentRule, PlannerConfig, Scenario, SolveStatus};
use serde::{Deserialize, Serialize};

use crate::args::{Cli, Command, CoordinateArgs, MarketFlags};
use crate::output::{to_json_bytes, write_atomic, RunManifest, Table, SCHEMA_VERSION};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("cannot read {path}")]
    Read {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot write {path}")]
    Write {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Mechanism(#[from] MechanismError),
    #[error(transparent)]
    Coordination(#[from] CoordinationError),
    #[error("invalid planner settings: {0}")]
    Config(String),
    #[error("{path} is not a results file: {message}")]
    Results { path: String, message: String },
}

/// Successful command outcomes, mapped to exit codes by `main`.
pub enum Outcome {
    Done,
    PropertyViolated,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Totals {
    pub objective: Option<f64>,
    pub welfare: Option<f64>,
    pub payments: Option<f64>,
    pub infeasible_subclasses: usize,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SolveResults {
    pub schema_version: u32,
    pub manifest: RunManifest,
    pub planner: PlannerConfig,
    pub payment_mode: PaymentMode,
    pub subclasses: Vec<SubclassRun>,
    pub totals: Totals,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct VerifyResults {
    pub schema_version: u32,
    pub manifest: RunManifest,
    pub planner: PlannerConfig,
    pub payment_mode: PaymentMode,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grid: Option<MisreportGrid>,
    pub report: PropertyReport,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ModelSummary {
    pub states: usize,
    pub members: Vec<String>,
    pub horizon: usize,
    pub delay: usize,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct CoordinateResults {
    pub schema_version: u32,
    pub manifest: RunManifest,
    pub model: ModelSummary,
    /// Optimal expected team cost `V_0`.
    pub value: f64,
    pub plan_nodes: usize,
    pub simulation: SimulationStats,
    pub trajectory_log: String,
}

pub fn run(cli: &Cli) -> Result<Outcome, CliError> {
    let out = cli
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from(format!("mobility-{}.json", cli.command.name())));
    match &cli.command {
        Command::Solve { scenario, market } => solve(scenario, market, cli.seed, &out),
        Command::Verify {
            scenario,
            property,
            market,
        } => verify(scenario, *property, market, cli.seed, &out),
        Command::Coordinate(args) => coordinate(args, cli.seed, &out),
        Command::Report { results } => report(results),
    }
}

fn read(path: &Path) -> Result<Vec<u8>, CliError> {
    std::fs::read(path).map_err(|e| CliError::Read {
        path: path.display().to_string(),
        source: e,
    })
}

fn write(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    write_atomic(path, bytes).map_err(|e| CliError::Write {
        path: path.display().to_string(),
        source: e,
    })
}

fn load(path: &Path) -> Result<(Vec<u8>, Scenario), CliError> {
    let bytes = read(path)?;
    let text = String::from_utf8_lossy(&bytes);
    let scenario = Scenario::from_json(&text)?;
    Ok((bytes, scenario))
}

/// Planner settings after command-line overrides; records the overrides.
fn planner_config(
    scenario: &Scenario,
    flags: &MarketFlags,
    manifest: &mut RunManifest,
) -> Result<PlannerConfig, CliError> {
    let mut config = scenario.planner().clone();
    if let Some(w) = flags.omega1 {
        config.omega1 = w;
        manifest.set("omega1", w);
    }
    if let Some(w) = flags.omega2 {
        config.omega2 = w;
        manifest.set("omega2", w);
    }
    if let Some(g) = flags.equity_gmax {
        config.equity_gmax = g.0;
        manifest.set("equity_gmax", g.0);
    }
    manifest.set("payment_mode", flags.payment_mode);
    config.validate().map_err(CliError::Config)?;
    Ok(config)
}

fn fmt(x: f64) -> String {
    format!("{x:.3}")
}

fn print_solve(results: &SolveResults) {
    let mut table = Table::new(&["traveler", "service", "time", "inconv", "payment", "utility"]);
    let mut infeasible = Vec::new();
    for run in &results.subclasses {
        match &run.payments {
            Some(priced) => {
                for t in &priced.outcome.travelers {
                    table.push(vec![
                        t.traveler.to_string(),
                        t.service.to_string(),
                        fmt(t.travel_time),
                        fmt(t.inconvenience),
                        fmt(t.payment),
                        fmt(t.utility),
                    ]);
                }
            }
            None => infeasible.push(run.index),
        }
    }
    if !table.is_empty() {
        print!("{}", table.render());
    }
    for index in infeasible {
        let members: Vec<String> = results.subclasses[index]
            .solve
            .subclass
            .iter()
            .map(|t| t.to_string())
            .collect();
        println!("subclass {index} ({}): infeasible", members.join(", "));
    }
    if let Some(j) = results.totals.objective {
        println!("objective {}", fmt(j));
    }
}

fn solve(path: &Path, flags: &MarketFlags, seed: u64, out: &Path) -> Result<Outcome, CliError> {
    let (bytes, scenario) = load(path)?;
    let mut manifest = RunManifest::new("solve", Some(path), seed, &bytes);
    let config = planner_config(&scenario, flags, &mut manifest)?;
    let rule = PaymentRule {
        mode: flags.payment_mode,
    };
    let runs = run_market(&scenario, &config, rule)?;
    let infeasible = runs
        .iter()
        .filter(|r| r.solve.status == SolveStatus::Infeasible)
        .count();
    let feasible = infeasible == 0;
    let outcomes = || runs.iter().filter_map(|r| r.payments.as_ref());
    let totals = Totals {
        objective: feasible.then(|| outcomes().map(|p| p.outcome.objective).sum()),
        welfare: feasible.then(|| outcomes().map(|p| p.outcome.welfare).sum()),
        payments: feasible.then(|| outcomes().flat_map(|p| p.payments.iter()).sum()),
        infeasible_subclasses: infeasible,
    };
    info!("solved {} subclasses, {infeasible} infeasible", runs.len());
    let results = SolveResults {
        schema_version: SCHEMA_VERSION,
        manifest,
        planner: config,
        payment_mode: flags.payment_mode,
        subclasses: runs,
        totals,
    };
    write(out, &to_json_bytes(&results))?;
    print_solve(&results);
    Ok(Outcome::Done)
}

fn print_verify(results: &VerifyResults) {
    let r = &results.report;
    let name = serde_json::to_value(r.property).expect("property serializes");
    let name = name.as_str().unwrap_or("property");
    if r.holds() {
        println!("{name}: holds on the tested grid ({} cases)", r.instances_tested);
    } else {
        println!(
            "{name}: violated, {} witnesses over {} cases",
            r.witnesses.len(),
            r.instances_tested
        );
        let mut table = Table::new(&["traveler", "grid", "gain"]);
        for w in &r.witnesses {
            table.push(vec![
                w.traveler.to_string(),
                w.grid_index.map_or("-".into(), |i| i.to_string()),
                fmt(w.gain),
            ]);
        }
        print!("{}", table.render());
    }
    if let Some(s) = r.aggregate_surplus {
        println!("aggregate surplus {}", fmt(s));
    }
    for f in &r.findings {
        println!("{f}");
    }
}

fn verify(
    path: &Path,
    property: Property,
    flags: &MarketFlags,
    seed: u64,
    out: &Path,
) -> Result<Outcome, CliError> {
    let (bytes, scenario) = load(path)?;
    let mut manifest = RunManifest::new("verify", Some(path), seed, &bytes);
    manifest.set("property", property);
    let config = planner_config(&scenario, flags, &mut manifest)?;
    let rule = PaymentRule {
        mode: flags.payment_mode,
    };
    let (grid, report) = match property {
        Property::Ic => {
            let grid = MisreportGrid::default();
            let report = verify_incentive_compatibility(&scenario, &config, rule, &grid, seed)?;
            (Some(grid), report)
        }
        Property::Ir => (None, verify_individual_rationality(&scenario, &config, rule)?),
        Property::Wbb => (None, verify_weak_budget_balance(&scenario, &config, rule)?),
    };
    let results = VerifyResults {
        schema_version: SCHEMA_VERSION,
        manifest,
        planner: config,
        payment_mode: flags.payment_mode,
        grid,
        report,
    };
    write(out, &to_json_bytes(&results))?;
    print_verify(&results);
    Ok(if results.report.holds() {
        Outcome::Done
    } else {
        Outcome::PropertyViolated
    })
}

/// Log name stored in the results file: relative when it sits next to it.
fn log_reference(log: &Path, out: &Path) -> String {
    let same_dir = log.parent().map(Path::to_path_buf).unwrap_or_default()
        == out.parent().map(Path::to_path_buf).unwrap_or_default();
    match (same_dir, log.file_name()) {
        (true, Some(name)) => name.to_string_lossy().into_owned(),
        _ => log.display().to_string(),
    }
}

fn print_coordinate(results: &CoordinateResults) {
    let s = &results.simulation;
    println!("V_0 {}", fmt(results.value));
    println!(
        "mean cost {} +/- {} over {} episodes",
        fmt(s.mean_cost),
        fmt(s.std_error),
        s.episodes
    );
    println!("collisions {}", s.collisions);
    println!("trajectories {}", results.trajectory_log);
}

fn coordinate(args: &CoordinateArgs, seed: u64, out: &Path) -> Result<Outcome, CliError> {
    let (model, mut manifest) = match &args.model {
        Some(path) => {
            let bytes = read(path)?;
            let model = TeamModel::from_json(&String::from_utf8_lossy(&bytes))?;
            (model, RunManifest::new("coordinate", Some(path), seed, &bytes))
        }
        None => {
            let params = IntersectionParams {
                lanes: args.lanes,
                cells: args.cells,
                delay: args.delay,
                noise: args.noise,
                slip: args.slip,
                horizon: args.horizon,
                collision_penalty: args.collision_penalty,
            };
            let model = build_intersection_scenario(&params)?;
            let mut manifest = RunManifest::new("coordinate", None, seed, model.to_json().as_bytes());
            manifest.set("intersection", &params);
            (model, manifest)
        }
    };
    manifest.set("episodes", args.episodes);
    manifest.set("keep_trajectories", args.keep_trajectories);

    let strategy = solve_planning(&model)?;
    info!("planned {} belief nodes", strategy.nodes().len());
    let stats = simulate_team(
        &model,
        &strategy,
        &SimulationConfig {
            episodes: args.episodes,
            seed,
            keep_trajectories: args.keep_trajectories,
        },
    )?;
    let log_path = args.trajectories.clone().unwrap_or_else(|| {
        let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        out.with_file_name(format!("{stem}.trajectories.jsonl"))
    });
    let mut log = Vec::new();
    write_trajectory_log(&mut log, &stats.trajectories).expect("writing to memory");
    write(&log_path, &log)?;

    let results = CoordinateResults {
        schema_version: SCHEMA_VERSION,
        manifest,
        model: ModelSummary {
            states: model.state_count(),
            members: model.members.iter().map(|m| m.name.clone()).collect(),
            horizon: model.horizon,
            delay: model.delay,
        },
        value: strategy.value(),
        plan_nodes: strategy.nodes().len(),
        simulation: stats,
        trajectory_log: log_reference(&log_path, out),
    };
    write(out, &to_json_bytes(&results))?;
    print_coordinate(&results);
    Ok(Outcome::Done)
}

fn report(path: &Path) -> Result<Outcome, CliError> {
    let bytes = read(path)?;
    let bad = |message: String| CliError::Results {
        path: path.display().to_string(),
        message,
    };
    let value: serde_json::Value = serde_json::from_slice(&bytes).map_err(|e| bad(e.to_string()))?;
    let command = value
        .pointer("/manifest/command")
        .and_then(|c| c.as_str())
        .ok_or_else(|| bad("no manifest".into()))?
        .to_string();
    if value.get("schema_version").and_then(|v| v.as_u64()) != Some(u64::from(SCHEMA_VERSION)) {
        return Err(bad("unsupported schema version".into()));
    }
    let parse_err = |e: serde_json::Error| bad(e.to_string());
    let manifest: RunManifest =
        serde_json::from_value(value["manifest"].clone()).map_err(parse_err)?;
    println!(
        "{} run, seed {}, input sha256 {}",
        manifest.command, manifest.seed, manifest.input_sha256
    );
    match command.as_str() {
        "solve" => print_solve(&serde_json::from_value(value).map_err(parse_err)?),
        "verify" => print_verify(&serde_json::from_value(value).map_err(parse_err)?),
        "coordinate" => print_coordinate(&serde_json::from_value(value).map_err(parse_err)?),
        other => return Err(bad(format!("unknown command `{other}`"))),
    }
    Ok(Outcome::Done)
}
