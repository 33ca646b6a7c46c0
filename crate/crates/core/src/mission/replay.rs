//! Command log: one JSON record per line, enough to rebuild a run bit for bit.
//!
//! The first line is a header carrying the scenario and seed. Each command is
//! logged with the tick that consumed it, and checkpoints hold the world hash
//! after a tick, written every [`CHECKPOINT_INTERVAL`] ticks and after every
//! tick that consumed a command. The last line records the final tick count
//! and hash.

use std::collections::{BTreeMap, VecDeque};
use std::io::{self, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::command::{Command, Envelope, Source};
use super::world::World;
use super::MissionState;
use crate::scenario::{Scenario, ScenarioError};

pub const FORMAT: &str = "pipebot-replay/1";
pub const CHECKPOINT_INTERVAL: u64 = 500;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Record {
    Header { format: String, seed: u64, scenario: serde_json::Value },
    Command { tick: u64, source: Source, seq: u16, command: Command },
    Checkpoint { tick: u64, hash: String },
    End { tick: u64, hash: String },
}

pub struct Recorder<W: Write> {
    out: W,
}

impl<W: Write> Recorder<W> {
    pub fn new(mut out: W, scenario: &Scenario) -> io::Result<Self> {
        let scenario_value: serde_json::Value =
            serde_json::from_str(&scenario.to_json()).map_err(io::Error::other)?;
        let header = Record::Header { format: FORMAT.to_string(), seed: scenario.seed, scenario: scenario_value };
        write_record(&mut out, &header)?;
        Ok(Recorder { out })
    }

    /// Log the commands consumed by tick `tick` and, when due, the resulting hash.
    pub fn record_tick(&mut self, tick: u64, commands: &[Envelope], after: &World) -> io::Result<()> {
        for env in commands {
            let record = Record::Command { tick, source: env.source, seq: env.seq, command: env.command.clone() };
            write_record(&mut self.out, &record)?;
        }
        if !commands.is_empty() || (tick + 1).is_multiple_of(CHECKPOINT_INTERVAL) {
            write_record(&mut self.out, &Record::Checkpoint { tick, hash: after.state_hash() })?;
        }
        Ok(())
    }

    pub fn finish(mut self, world: &World) -> io::Result<W> {
        write_record(&mut self.out, &Record::End { tick: world.tick_index(), hash: world.state_hash() })?;
        self.out.flush()?;
        Ok(self.out)
    }

    pub fn flush(&mut self) -> io::Result<()> {
        self.out.flush()
    }
}

fn write_record<W: Write>(out: &mut W, record: &Record) -> io::Result<()> {
    serde_json::to_writer(&mut *out, record).map_err(io::Error::other)?;
    out.write_all(b"\n")
}

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("first record must be a header")]
    MissingHeader,
    #[error("unsupported log format {0:?}")]
    Format(String),
    #[error("embedded scenario: {0}")]
    Scenario(#[from] ScenarioError),
    #[error("replay diverged at tick {tick}: expected {expected}, got {actual}")]
    Diverged { tick: u64, expected: String, actual: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplaySummary {
    pub ticks: u64,
    pub commands: usize,
    pub checkpoints: usize,
    pub final_hash: Option<String>,
    pub final_state: Option<MissionState>,
}

/// The scenario (with its seed applied) a log was recorded against, or `None` for an empty log.
pub fn header(text: &str) -> Result<Option<Scenario>, ReplayError> {
    let Some((i, line)) = text.lines().enumerate().find(|(_, l)| !l.trim().is_empty()) else {
        return Ok(None);
    };
    let record: Record =
        serde_json::from_str(line).map_err(|e| ReplayError::Parse { line: i + 1, message: e.to_string() })?;
    header_scenario(record).map(Some)
}

fn header_scenario(record: Record) -> Result<Scenario, ReplayError> {
    let Record::Header { format, seed, scenario } = record else {
        return Err(ReplayError::MissingHeader);
    };
    if format != FORMAT {
        return Err(ReplayError::Format(format));
    }
    let mut scenario = Scenario::from_json(&scenario.to_string())?;
    scenario.seed = seed;
    Ok(scenario)
}

/// Re-run a log against a fresh world and compare every checkpoint.
///
/// An empty log is trivially consistent. A log without an end record (a
/// server that died) is checked up to its last checkpoint.
pub fn verify(text: &str) -> Result<ReplaySummary, ReplayError> {
    let mut records = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: Record =
            serde_json::from_str(line).map_err(|e| ReplayError::Parse { line: i + 1, message: e.to_string() })?;
        records.push(record);
    }
    let mut iter = records.into_iter();
    let Some(first) = iter.next() else {
        return Ok(ReplaySummary { ticks: 0, commands: 0, checkpoints: 0, final_hash: None, final_state: None });
    };
    let scenario = header_scenario(first)?;

    let mut commands: BTreeMap<u64, Vec<Envelope>> = BTreeMap::new();
    let mut checkpoints: BTreeMap<u64, String> = BTreeMap::new();
    let mut end: Option<(u64, String)> = None;
    let mut command_count = 0;
    for record in iter {
        match record {
            Record::Header { .. } => return Err(ReplayError::Parse { line: 0, message: "duplicate header".into() }),
            Record::Command { tick, source, seq, command } => {
                command_count += 1;
                commands.entry(tick).or_default().push(Envelope { source, seq, command });
            }
            Record::Checkpoint { tick, hash } => {
                checkpoints.insert(tick, hash);
            }
            Record::End { tick, hash } => end = Some((tick, hash)),
        }
    }

    let last_tick = match &end {
        Some((tick, _)) => *tick,
        None => checkpoints.keys().next_back().map(|t| t + 1).unwrap_or(0),
    };
    let mut world = World::new(&scenario);
    for tick in 0..last_tick {
        let mut queue: VecDeque<Envelope> = commands.remove(&tick).unwrap_or_default().into();
        world.tick(&mut queue);
        if let Some(expected) = checkpoints.get(&tick) {
            let actual = world.state_hash();
            if &actual != expected {
                return Err(ReplayError::Diverged { tick, expected: expected.clone(), actual });
            }
        }
    }
    let final_hash = world.state_hash();
    if let Some((tick, expected)) = &end {
        if *expected != final_hash {
            return Err(ReplayError::Diverged { tick: *tick, expected: expected.clone(), actual: final_hash });
        }
    }
    Ok(ReplaySummary {
        ticks: last_tick,
        commands: command_count,
        checkpoints: checkpoints.len(),
        final_hash: Some(final_hash),
        final_state: Some(world.state()),
    })
}
