use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::Parser;
use pipebot_core::mission::replay::{self, ReplayError};
use pipebot_core::mission::{run_mission, AbortPolicy, MissionPlan, Outcome};
use pipebot_core::Scenario;
use pipebot_server::{ServeOptions, Server, DEFAULT_BRIDGE_PORT, DEFAULT_PORT};

const EXIT_DONE: u8 = 0;
const EXIT_USAGE: u8 = 1;
const EXIT_FAULT: u8 = 2;
const EXIT_DIVERGED: u8 = 3;

/// Simulate an in-pipe joint rehabilitation robot.
///
/// With no mode flag the autopilot runs the scenario headless to DONE or FAULT.
#[derive(Debug, Parser)]
#[command(name = "pipebot", version)]
struct Cli {
    /// Scenario file (JSON). Defaults to the bundled 100 m, 19-joint pipe.
    #[arg(long, value_name = "PATH")]
    scenario: Option<PathBuf>,

    /// Override the scenario seed.
    #[arg(long, value_name = "N")]
    seed: Option<u64>,

    /// Serve the teleoperation protocol until interrupted.
    #[arg(long, conflicts_with = "replay")]
    serve: bool,

    /// Run the autopilot. In serve mode it drives until an operator takes the lock.
    #[arg(long)]
    autopilot: bool,

    /// Re-execute a replay log and check its state hashes.
    #[arg(long, value_name = "PATH")]
    replay: Option<PathBuf>,

    /// Write the mission report (JSON) here.
    #[arg(long, value_name = "PATH", conflicts_with_all = ["serve", "replay"])]
    report: Option<PathBuf>,

    /// Write the replay log (NDJSON) here.
    #[arg(long, value_name = "PATH", conflicts_with = "replay")]
    log: Option<PathBuf>,

    #[arg(long, value_name = "N", default_value_t = DEFAULT_PORT)]
    port: u16,

    #[arg(long, value_name = "N", default_value_t = DEFAULT_BRIDGE_PORT)]
    bridge_port: u16,

    /// Drive past joints the tool cannot reach instead of faulting.
    #[arg(long)]
    skip_unreachable: bool,

    /// Milliseconds per tick in serve mode; 0 runs as fast as possible. For testing.
    #[arg(long, value_name = "MS", default_value_t = 20, hide = true)]
    tick_ms: u64,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { EXIT_DONE });
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_USAGE)
        }
    }
}

fn run(cli: Cli) -> Result<u8> {
    if let Some(path) = &cli.replay {
        return replay_log(path, &cli);
    }
    let scenario = load_scenario(&cli)?;
    if cli.serve {
        serve(scenario, &cli)
    } else {
        simulate(scenario, &cli)
    }
}

fn load_scenario(cli: &Cli) -> Result<Scenario> {
    let mut scenario = match &cli.scenario {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading scenario {}", path.display()))?;
            Scenario::from_json(&text).with_context(|| format!("scenario {}", path.display()))?
        }
        None => Scenario::default_mission(),
    };
    if let Some(seed) = cli.seed {
        scenario.seed = seed;
    }
    Ok(scenario)
}

fn plan_for(scenario: &Scenario, cli: &Cli) -> MissionPlan {
    let mut plan = MissionPlan::all_joints(scenario);
    if cli.skip_unreachable {
        plan.abort = AbortPolicy::SkipUnreachable;
    }
    plan
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn simulate(scenario: Scenario, cli: &Cli) -> Result<u8> {
    let plan = plan_for(&scenario, cli);
    let out = run_mission(&scenario, &plan).context("mission plan")?;
    if let Some(path) = &cli.report {
        write_file(path, &out.report.to_json())?;
    }
    if let Some(path) = &cli.log {
        write_file(path, &out.replay_log)?;
    }
    print!("{}", out.report.to_table());
    match out.report.outcome {
        Outcome::Done => Ok(EXIT_DONE),
        Outcome::Fault => {
            if let Some(f) = out.report.fatal_fault() {
                eprintln!("FAULT at tick {}: {}: {}", f.tick, f.cause, f.detail);
            }
            Ok(EXIT_FAULT)
        }
    }
}

fn serve(scenario: Scenario, cli: &Cli) -> Result<u8> {
    let opts = ServeOptions {
        port: cli.port,
        bridge_port: cli.bridge_port,
        tick_period: Duration::from_millis(cli.tick_ms),
        autopilot: cli.autopilot.then(|| plan_for(&scenario, cli)),
        ..Default::default()
    };
    let log: Option<Box<dyn Write + Send>> = match &cli.log {
        Some(path) => {
            let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
            Some(Box::new(BufWriter::new(file)))
        }
        None => None,
    };
    let server = Server::bind(scenario, opts).context("binding listeners")?;
    let stop = server.shutdown_handle();
    ctrlc::set_handler(move || stop.shutdown()).context("installing interrupt handler")?;
    eprintln!("listening on {} (bridge ws://{})", server.local_addr()?, server.bridge_addr()?);

    let summary = server.run(log).context("serving")?;
    eprintln!(
        "stopped after {} ticks in {} ({} sessions), hash {}",
        summary.ticks, summary.final_state, summary.sessions, summary.final_hash
    );
    Ok(EXIT_DONE)
}

fn replay_log(path: &Path, cli: &Cli) -> Result<u8> {
    let text = fs::read_to_string(path).with_context(|| format!("reading log {}", path.display()))?;
    if cli.scenario.is_some() || cli.seed.is_some() {
        let expected = load_scenario(cli)?;
        if let Some(recorded) = replay::header(&text).context("log header")? {
            if recorded.to_json() != Scenario::from_json(&expected.to_json())?.to_json() {
                bail!("{} was recorded against a different scenario or seed", path.display());
            }
        }
    }
    match replay::verify(&text) {
        Ok(summary) => {
            let hash = summary.final_hash.as_deref().unwrap_or("-");
            let state = summary.final_state.map(|s| s.to_string()).unwrap_or_else(|| "-".into());
            println!(
                "replay ok: {} ticks, {} commands, {} checkpoints, final {state} {hash}",
                summary.ticks, summary.commands, summary.checkpoints
            );
            Ok(EXIT_DONE)
        }
        Err(ReplayError::Diverged { tick, expected, actual }) => {
            eprintln!("replay diverged at tick {tick}: expected {expected}, got {actual}");
            println!("first divergent tick: {tick}");
            Ok(EXIT_DIVERGED)
        }
        Err(e) => Err(e).context("replay log"),
    }
}
