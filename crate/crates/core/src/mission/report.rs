use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::command::FaultCause;
use super::world::{Event, World, TICK_DT_S};
use super::MissionState;
use crate::pipe_world::{removal_fraction, seal_coverage, Volume};

pub type PhaseTimes = BTreeMap<MissionState, f64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Outcome {
    Done,
    Fault,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaultRecord {
    pub tick: u64,
    pub cause: FaultCause,
    pub detail: String,
    pub joint: Option<usize>,
    /// False for problems the mission stepped around (a skipped joint).
    pub fatal: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointReport {
    pub index: usize,
    pub axial_pos_mm: f64,
    pub axial_offset_mm: f64,
    pub planned: bool,
    pub visited: bool,
    pub removal_fraction: f64,
    pub seal_coverage: f64,
    pub finished: bool,
    pub sealant_mm3: f64,
    pub phase_times_s: PhaseTimes,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Totals {
    pub joints_planned: usize,
    pub joints_finished: usize,
    pub distance_mm: f64,
    pub sealant_used_mm3: f64,
    pub sealant_used_pl: i64,
    pub sealant_loaded_pl: i64,
    pub initial_fill_pl: i64,
    pub final_fill_pl: i64,
    pub cartridge_loads: u32,
    pub injection_time_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MissionReport {
    pub outcome: Outcome,
    pub seed: u64,
    pub ticks: u64,
    pub duration_s: f64,
    pub final_hash: String,
    pub joints: Vec<JointReport>,
    /// Time spent after the last planned joint or outside any joint's work.
    pub unattributed_s: PhaseTimes,
    pub totals: Totals,
    pub faults: Vec<FaultRecord>,
}

impl MissionReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn fatal_fault(&self) -> Option<&FaultRecord> {
        self.faults.iter().find(|f| f.fatal)
    }

    /// Plain-text summary table.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "outcome   {:?}", self.outcome);
        if let Some(f) = self.fatal_fault() {
            let _ = writeln!(out, "fault     {} at tick {}: {}", f.cause, f.tick, f.detail);
        }
        let _ = writeln!(out, "duration  {:.2} s ({} ticks)", self.duration_s, self.ticks);
        let t = &self.totals;
        let _ = writeln!(out, "joints    {}/{} finished", t.joints_finished, t.joints_planned);
        let _ = writeln!(out, "distance  {:.1} m", t.distance_mm / 1000.0);
        let _ = writeln!(out, "sealant   {:.1} ml in {:.2} s, {} reloads", t.sealant_used_mm3 / 1000.0, t.injection_time_s, t.cartridge_loads);
        let _ = writeln!(out);
        let _ = writeln!(out, "{:>5} {:>10} {:>8} {:>8} {:>8} {:>6} {:>9}", "joint", "pos_mm", "offset", "removal", "cover", "done", "time_s");
        for j in self.joints.iter().filter(|j| j.planned) {
            let time: f64 = j.phase_times_s.values().sum();
            let _ = writeln!(
                out,
                "{:>5} {:>10.1} {:>8.1} {:>8.4} {:>8.4} {:>6} {:>9.2}",
                j.index,
                j.axial_pos_mm,
                j.axial_offset_mm,
                j.removal_fraction,
                j.seal_coverage,
                if j.finished { "yes" } else { "no" },
                time
            );
        }
        out
    }
}

/// Accumulates per-phase tick counts while a mission runs.
#[derive(Debug, Clone)]
pub(crate) struct ReportBuilder {
    planned: Vec<bool>,
    visited: Vec<bool>,
    initial_seal: Vec<Volume>,
    joint_ticks: Vec<BTreeMap<MissionState, u64>>,
    other_ticks: BTreeMap<MissionState, u64>,
    faults: Vec<FaultRecord>,
}

fn seconds(ticks: &BTreeMap<MissionState, u64>) -> PhaseTimes {
    ticks.iter().map(|(s, &n)| (*s, n as f64 * TICK_DT_S)).collect()
}

impl ReportBuilder {
    pub fn new(world: &World, targets: &[usize]) -> Self {
        let n = world.pipe.joints.len();
        let mut planned = vec![false; n];
        for &t in targets {
            planned[t] = true;
        }
        ReportBuilder {
            planned,
            visited: vec![false; n],
            initial_seal: world.pipe.joints.iter().map(|j| j.seal.total()).collect(),
            joint_ticks: vec![BTreeMap::new(); n],
            other_ticks: BTreeMap::new(),
            faults: Vec::new(),
        }
    }

    /// Record one completed tick; `joint` is the target the autopilot was working toward.
    pub fn observe(&mut self, world: &World, events: &[Event], joint: Option<usize>) {
        let state = world.state();
        let bucket = match joint {
            Some(j) => &mut self.joint_ticks[j],
            None => &mut self.other_ticks,
        };
        *bucket.entry(state).or_insert(0) += 1;
        if let Some(j) = joint {
            if state == MissionState::ExtendedIdle {
                self.visited[j] = true;
            }
        }
        for ev in events {
            if let Event::Fault { cause, detail } = ev {
                self.faults.push(FaultRecord {
                    tick: world.tick_index() - 1,
                    cause: *cause,
                    detail: detail.clone(),
                    joint,
                    fatal: true,
                });
            }
        }
    }

    pub fn skipped(&mut self, tick: u64, joint: usize, detail: String) {
        self.faults.push(FaultRecord { tick, cause: FaultCause::JointUnreachable, detail, joint: Some(joint), fatal: false });
    }

    pub fn finish(self, world: &World, final_hash: String) -> MissionReport {
        let joints: Vec<JointReport> = world
            .pipe
            .joints
            .iter()
            .enumerate()
            .map(|(i, j)| JointReport {
                index: i,
                axial_pos_mm: j.axial_pos_mm,
                axial_offset_mm: j.axial_offset_mm,
                planned: self.planned[i],
                visited: self.visited[i],
                removal_fraction: removal_fraction(j),
                seal_coverage: seal_coverage(j),
                finished: j.finished,
                sealant_mm3: (j.seal.total() - self.initial_seal[i]).mm3(),
                phase_times_s: seconds(&self.joint_ticks[i]),
            })
            .collect();
        let ledger = &world.ledger;
        let totals = Totals {
            joints_planned: self.planned.iter().filter(|&&p| p).count(),
            joints_finished: joints.iter().filter(|j| j.planned && j.finished).count(),
            distance_mm: ledger.distance_mm,
            sealant_used_mm3: ledger.deposited.mm3(),
            sealant_used_pl: ledger.deposited.picoliters(),
            sealant_loaded_pl: ledger.loaded.picoliters(),
            initial_fill_pl: ledger.initial_fill.picoliters(),
            final_fill_pl: world.robot.cartridge.fill.picoliters(),
            cartridge_loads: ledger.cartridge_loads,
            injection_time_s: ledger.injection_time_s,
        };
        let outcome = if world.state() == MissionState::Done { Outcome::Done } else { Outcome::Fault };
        MissionReport {
            outcome,
            seed: world.scenario.seed,
            ticks: world.tick_index(),
            duration_s: world.time_s(),
            final_hash,
            joints,
            unattributed_s: seconds(&self.other_ticks),
            totals,
            faults: self.faults,
        }
    }
}
