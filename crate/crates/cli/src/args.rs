use std::path::PathBuf;

use clap::builder::{PossibleValuesParser, TypedValueParser};
use clap::{Args, Parser, Subcommand};
use mobility_core::mechanism::Property;
use mobility_core::PaymentMode;

#[derive(Debug, Parser)]
#[command(name = "mobility", version, about = "Mobility market solver and team coordination simulator")]
pub struct Cli {
    /// Master seed for every randomized step.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,

    /// Results file; defaults to `mobility-<command>.json`.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve the assignment market and price every traveler.
    Solve {
        scenario: PathBuf,
        #[command(flatten)]
        market: MarketFlags,
    },
    /// Check a mechanism property on a scenario.
    Verify {
        scenario: PathBuf,
        #[arg(value_parser = PossibleValuesParser::new(["ic", "ir", "wbb"])
            .map(|s| s.parse::<Property>().expect("listed value")))]
        property: Property,
        #[command(flatten)]
        market: MarketFlags,
    },
    /// Plan and simulate a decentralized team.
    Coordinate(CoordinateArgs),
    /// Print a summary of a results file.
    Report { results: PathBuf },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Solve { .. } => "solve",
            Command::Verify { .. } => "verify",
            Command::Coordinate(_) => "coordinate",
            Command::Report { .. } => "report",
        }
    }
}

/// Equity bound override: a number in `[0, 1]` or `none`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GmaxArg(pub Option<f64>);

fn parse_gmax(s: &str) -> Result<GmaxArg, String> {
    if s.eq_ignore_ascii_case("none") {
        return Ok(GmaxArg(None));
    }
    s.parse::<f64>()
        .map(|v| GmaxArg(Some(v)))
        .map_err(|_| format!("expected a number or `none`, got `{s}`"))
}

#[derive(Debug, Args)]
pub struct MarketFlags {
    /// Weight of total inconvenience.
    #[arg(long)]
    pub omega1: Option<f64>,
    /// Weight of total operating cost.
    #[arg(long)]
    pub omega2: Option<f64>,
    /// Bound on the inconvenience Gini coefficient, or `none`.
    #[arg(long, value_parser = parse_gmax)]
    pub equity_gmax: Option<GmaxArg>,
    #[arg(long, default_value = "clarke-floored",
        value_parser = PossibleValuesParser::new(["clarke", "clarke-floored"])
            .map(|s| s.parse::<PaymentMode>().expect("listed value")))]
    pub payment_mode: PaymentMode,
}

#[derive(Debug, Args)]
pub struct CoordinateArgs {
    /// Team model file.
    #[arg(long, required_unless_present = "intersection", conflicts_with = "intersection")]
    pub model: Option<PathBuf>,
    /// Use the built-in two-vehicle intersection instead of a model file.
    #[arg(long)]
    pub intersection: bool,
    #[arg(long, default_value_t = 2)]
    pub lanes: usize,
    #[arg(long, default_value_t = 2)]
    pub cells: usize,
    #[arg(long, default_value_t = 1)]
    pub delay: usize,
    /// Observation noise of the human-driven vehicle.
    #[arg(long, default_value_t = 0.0)]
    pub noise: f64,
    /// Probability that a move fails.
    #[arg(long, default_value_t = 0.0)]
    pub slip: f64,
    #[arg(long, default_value_t = 5)]
    pub horizon: usize,
    /// Collision penalty; defaults to 1000 times the horizon.
    #[arg(long)]
    pub collision_penalty: Option<f64>,
    #[arg(long, default_value_t = 10_000)]
    pub episodes: usize,
    /// Number of leading episodes written to the trajectory log.
    #[arg(long, default_value_t = 5)]
    pub keep_trajectories: usize,
    /// Trajectory log; defaults to the results file with a `.trajectories.jsonl` suffix.
    #[arg(long)]
    pub trajectories: Option<PathBuf>,
}
