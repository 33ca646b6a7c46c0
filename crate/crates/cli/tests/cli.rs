use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpStream;
use std::path::PathBuf;
use std::process::{Command, Output, Stdio};
use std::time::{Duration, Instant};

use pipebot_core::mission::replay;
use pipebot_core::mission::MissionState;
use pipebot_core::protocol::{topic, FrameDecoder, Message};

fn pipebot() -> Command {
    Command::new(env!("CARGO_BIN_EXE_pipebot"))
}

fn tmp(name: &str) -> PathBuf {
    let dir = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("cli");
    std::fs::create_dir_all(&dir).unwrap();
    dir.join(name)
}

fn run(args: &[&str]) -> Output {
    pipebot().args(args).output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn write_scenario(name: &str, json: &str) -> String {
    let path = tmp(name);
    std::fs::write(&path, json).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn default_scenario_finishes_every_joint() {
    let report = tmp("default-report.json");
    let log = tmp("default-replay.ndjson");
    let out = run(&["--report", report.to_str().unwrap(), "--log", log.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("19/19 finished"));
    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(json["outcome"], "DONE");
    assert_eq!(json["totals"]["joints_finished"], 19);

    let out = run(&["--replay", log.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn unreachable_joint_exits_with_fault() {
    let scenario = write_scenario(
        "offset120.json",
        r#"{"segments":[{"inner_diameter_mm":1000,"length_mm":10000}],
            "joints":[{"axial_pos_mm":5000,"axial_offset_mm":120}]}"#,
    );
    let out = run(&["--scenario", &scenario]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("joint unreachable"));
}

#[test]
fn missing_scenario_is_a_usage_error() {
    let out = run(&["--scenario", "/nonexistent/pipe.json"]);
    assert_eq!(code(&out), 1);
    assert!(!out.stderr.is_empty());
}

#[test]
fn invalid_scenario_and_bad_flags_are_usage_errors() {
    let scenario = write_scenario("bad.json", r#"{"segments":[]}"#);
    assert_eq!(code(&run(&["--scenario", &scenario])), 1);
    assert_eq!(code(&run(&["--no-such-flag"])), 1);
    assert_eq!(code(&run(&["--seed", "-4"])), 1);
    assert_eq!(code(&run(&["--help"])), 0);
}

#[test]
fn same_seed_gives_identical_reports() {
    let scenario = write_scenario(
        "two.json",
        r#"{"segments":[{"inner_diameter_mm":1000,"length_mm":15000}],"joint_pattern":{"spacing_mm":5000,"corrosion":1.0},"seed":3}"#,
    );
    let a = tmp("seed-a.json");
    let b = tmp("seed-b.json");
    for path in [&a, &b] {
        let out = run(&["--scenario", &scenario, "--seed", "11", "--report", path.to_str().unwrap()]);
        assert_eq!(code(&out), 0);
    }
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}

#[test]
fn tampered_log_exits_with_divergence() {
    let scenario = write_scenario(
        "one.json",
        r#"{"segments":[{"inner_diameter_mm":1000,"length_mm":10000}],"joint_pattern":{"spacing_mm":5000,"corrosion":1.0}}"#,
    );
    let log = tmp("tamper.ndjson");
    let out = run(&["--scenario", &scenario, "--log", log.to_str().unwrap()]);
    assert_eq!(code(&out), 0);
    assert_eq!(code(&run(&["--replay", log.to_str().unwrap(), "--scenario", &scenario])), 0);

    let text = std::fs::read_to_string(&log).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    let idx = lines.iter().position(|l| l.contains("\"inject\"")).unwrap();
    let mut record: serde_json::Value = serde_json::from_str(&lines[idx]).unwrap();
    let tick = record["tick"].as_u64().unwrap();
    record["tick"] = serde_json::json!(tick + 1);
    lines[idx] = record.to_string();
    let tampered = tmp("tampered.ndjson");
    std::fs::write(&tampered, lines.join("\n")).unwrap();

    let out = run(&["--replay", tampered.to_str().unwrap()]);
    assert_eq!(code(&out), 3);
    assert!(String::from_utf8_lossy(&out.stdout).contains(&format!("first divergent tick: {tick}")));

    let other = write_scenario(
        "other.json",
        r#"{"segments":[{"inner_diameter_mm":1200,"length_mm":10000}],"joint_pattern":{"spacing_mm":5000,"corrosion":1.0}}"#,
    );
    assert_eq!(code(&run(&["--replay", log.to_str().unwrap(), "--scenario", &other])), 1);
}

#[test]
fn empty_log_on_empty_scenario_replays() {
    let scenario = write_scenario("empty.json", r#"{"segments":[{"inner_diameter_mm":1000,"length_mm":5000}]}"#);
    let log = tmp("empty.ndjson");
    std::fs::write(&log, "").unwrap();
    assert_eq!(code(&run(&["--replay", log.to_str().unwrap(), "--scenario", &scenario])), 0);
    assert_eq!(code(&run(&["--replay", "/nonexistent/log.ndjson"])), 1);
}

#[test]
fn port_in_use_is_a_usage_error() {
    let taken = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let port = taken.local_addr().unwrap().port().to_string();
    let out = run(&["--serve", "--port", &port, "--bridge-port", "0"]);
    assert_eq!(code(&out), 1);
}

#[test]
fn interrupt_while_sealing_shuts_down_cleanly() {
    let log = tmp("serve.ndjson");
    let mut child = pipebot()
        .args(["--serve", "--autopilot", "--port", "0", "--bridge-port", "0", "--tick-ms", "0"])
        .args(["--log", log.to_str().unwrap()])
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    let mut stderr = BufReader::new(child.stderr.take().unwrap());
    let mut banner = String::new();
    stderr.read_line(&mut banner).unwrap();
    let addr = banner.split_whitespace().nth(2).expect("listening banner").to_string();

    let mut stream = TcpStream::connect(&addr).unwrap();
    stream.set_read_timeout(Some(Duration::from_millis(50))).unwrap();
    stream.write_all(&Message::Subscribe { mask: topic::EVENT }.encode(1).unwrap()).unwrap();
    let mut decoder = FrameDecoder::new();
    let deadline = Instant::now() + Duration::from_secs(60);
    let mut sealing = false;
    while !sealing && Instant::now() < deadline {
        let mut buf = [0u8; 4096];
        if let Ok(n) = stream.read(&mut buf) {
            decoder.push(&buf[..n]);
        }
        while let Some(frame) = decoder.next_frame() {
            if let Ok(Message::Event(e)) = Message::from_frame(&frame) {
                sealing |= e.detail.ends_with("->SEALING");
            }
        }
    }
    assert!(sealing, "autopilot never reached SEALING");

    let killed = Command::new("kill").args(["-INT", &child.id().to_string()]).status().unwrap();
    assert!(killed.success());
    let status = child.wait().unwrap();
    assert_eq!(status.code(), Some(0));
    let mut rest = String::new();
    stderr.read_to_string(&mut rest).unwrap();
    assert!(rest.contains("EXTENDED_IDLE"), "{rest}");

    let summary = replay::verify(&std::fs::read_to_string(&log).unwrap()).unwrap();
    assert_eq!(summary.final_state, Some(MissionState::ExtendedIdle));
}
