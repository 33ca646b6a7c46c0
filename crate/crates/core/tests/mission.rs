use pipebot_core::mission::replay::{self, ReplayError};
use pipebot_core::mission::{run_mission, run_mission_observed, AbortPolicy, Event, FaultCause, MissionPlan, MissionState, Outcome};
use pipebot_core::pipe_world::{removal_fraction, Volume};
use pipebot_core::tool_system::REMOVAL_GATE;
use pipebot_core::Scenario;

fn short_pipe(joints: usize) -> Scenario {
    Scenario::uniform(1000.0, 5000.0 * (joints as f64 + 1.0), Some(5000.0), 7).unwrap()
}

#[test]
fn default_mission_finishes_every_joint() {
    let scenario = Scenario::default_mission();
    let plan = MissionPlan::all_joints(&scenario);
    let mut deposits_below_gate = 0;
    let mut unsafe_ticks = 0;
    let out = run_mission_observed(&scenario, &plan, |world, events| {
        if world.safety_violation().is_some() {
            unsafe_ticks += 1;
        }
        for ev in events {
            if let Event::JointUpdated { joint } = ev {
                let j = &world.pipe.joints[*joint];
                if j.seal.total() > Volume::ZERO && removal_fraction(j) < REMOVAL_GATE {
                    deposits_below_gate += 1;
                }
            }
        }
    })
    .unwrap();
    let report = &out.report;
    assert_eq!(report.outcome, Outcome::Done, "{:?}", report.faults);
    assert_eq!(report.totals.joints_planned, 19);
    assert_eq!(report.totals.joints_finished, 19);
    assert_eq!(deposits_below_gate, 0);
    assert_eq!(unsafe_ticks, 0);

    let t = &report.totals;
    assert_eq!(t.initial_fill_pl + t.sealant_loaded_pl, t.sealant_used_pl + t.final_fill_pl);
    for j in &report.joints {
        assert!(j.finished);
        assert!(j.removal_fraction >= REMOVAL_GATE);
    }
    let phase_total: f64 = report
        .joints
        .iter()
        .flat_map(|j| j.phase_times_s.values())
        .chain(report.unattributed_s.values())
        .sum();
    assert!((phase_total - report.duration_s).abs() < 1e-6);
    assert!((t.injection_time_s - 19.0 * 30.0).abs() < 19.0 * 0.1);

    let summary = replay::verify(&out.replay_log).unwrap();
    assert_eq!(summary.final_hash.as_deref(), Some(report.final_hash.as_str()));
    assert_eq!(summary.final_state, Some(MissionState::Done));
}

#[test]
fn same_seed_same_report() {
    let scenario = short_pipe(2);
    let plan = MissionPlan::all_joints(&scenario);
    let a = run_mission(&scenario, &plan).unwrap();
    let b = run_mission(&scenario, &plan).unwrap();
    assert_eq!(a.report.to_json(), b.report.to_json());
    assert_eq!(a.replay_log, b.replay_log);
}

fn with_offset(offset: f64) -> Scenario {
    let mut s = short_pipe(1);
    s.pipe.joints[0].axial_offset_mm = offset;
    s
}

#[test]
fn offset_at_reach_limit_is_rehabilitated() {
    let s = with_offset(100.0);
    let out = run_mission(&s, &MissionPlan::all_joints(&s)).unwrap();
    assert_eq!(out.report.outcome, Outcome::Done, "{:?}", out.report.faults);
    assert!(out.report.joints[0].finished);

    let s = with_offset(-100.0);
    let out = run_mission(&s, &MissionPlan::all_joints(&s)).unwrap();
    assert!(out.report.joints[0].finished);
}

#[test]
fn offset_past_reach_limit_faults() {
    let s = with_offset(101.0);
    let out = run_mission(&s, &MissionPlan::all_joints(&s)).unwrap();
    assert_eq!(out.report.outcome, Outcome::Fault);
    let fault = out.report.fatal_fault().unwrap();
    assert_eq!(fault.cause, FaultCause::JointUnreachable);
    assert!(fault.cause.to_string().contains("joint unreachable"));
}

#[test]
fn skip_policy_drives_past_unreachable_joint() {
    let mut s = short_pipe(2);
    s.pipe.joints[0].axial_offset_mm = 120.0;
    let mut plan = MissionPlan::all_joints(&s);
    plan.abort = AbortPolicy::SkipUnreachable;
    let out = run_mission(&s, &plan).unwrap();
    assert_eq!(out.report.outcome, Outcome::Done);
    assert!(!out.report.joints[0].finished);
    assert!(out.report.joints[1].finished);
    assert_eq!(out.report.faults.len(), 1);
    assert!(!out.report.faults[0].fatal);
}

#[test]
fn cartridge_exhaustion_faults_without_reload() {
    let mut s = short_pipe(2);
    let per_joint = Volume(s.pipe.joints[0].seal.required_per_sector.0 * 72);
    s.cartridge.initial_fill_mm3 = Some(per_joint.mm3());
    s.cartridge.capacity_mm3 = per_joint.mm3();
    let mut plan = MissionPlan::all_joints(&s);
    plan.reload_cartridge = false;
    let out = run_mission(&s, &plan).unwrap();
    assert!(out.report.joints[0].finished);
    assert_eq!(out.report.outcome, Outcome::Fault);
    assert_eq!(out.report.fatal_fault().unwrap().cause, FaultCause::CartridgeEmpty);
    let t = &out.report.totals;
    assert_eq!(t.final_fill_pl, 0);
    assert_eq!(t.initial_fill_pl, t.sealant_used_pl);
}

#[test]
fn tampered_log_diverges() {
    let s = short_pipe(1);
    let out = run_mission(&s, &MissionPlan::all_joints(&s)).unwrap();
    let mut lines: Vec<String> = out.replay_log.lines().map(String::from).collect();
    let idx = lines.iter().position(|l| l.contains("\"kind\":\"command\"") && l.contains("tool_move")).unwrap();
    let mut record: serde_json::Value = serde_json::from_str(&lines[idx]).unwrap();
    let tick = record["tick"].as_u64().unwrap();
    record["tick"] = serde_json::json!(tick + 1);
    lines[idx] = record.to_string();
    match replay::verify(&lines.join("\n")) {
        Err(ReplayError::Diverged { tick: at, .. }) => assert_eq!(at, tick),
        other => panic!("expected divergence, got {other:?}"),
    }
}

#[test]
fn empty_log_replays() {
    let summary = replay::verify("").unwrap();
    assert_eq!(summary.ticks, 0);
}
