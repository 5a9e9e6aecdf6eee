use std::path::{Path, PathBuf};

use lspsim_core::forwarding::LookupCostModel;
use lspsim_experiments::calibrate::cost_toml;
use lspsim_experiments::output::{csv_to_table, emit_outputs, prepare_dir, table_to_csv};
use lspsim_experiments::scenario::scenario_result;
use lspsim_experiments::{load_scenario, parse_scenario, run_scenario};

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

const THREE_NODES: &str = r#"
name = "three"
end_time_us = 2000000
mode = "ip"

[link_defaults]
link_rate_bps = 10000000
link_delay_us = 1000
qos_enabled = false

[[nodes]]
name = "A"
role = "host"

[[nodes]]
name = "B1"
role = "edge_router"

[[nodes]]
name = "C"
role = "host"

[[links]]
a = "A"
b = "B1"

[[links]]
a = "B1"
b = "C"

[[flows]]
name = "echo, \"quoted\""
kind = "ping_burst"
src = "A"
dst = "C"
payload_bits = 1000
count = 10
"#;

#[test]
fn shipped_scenarios_load_and_conserve() {
    let mut seen = 0;
    for entry in std::fs::read_dir(configs_dir()).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().and_then(|e| e.to_str()) != Some("toml") || path.ends_with("calibration.toml") {
            continue;
        }
        let s = load_scenario(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        let r = run_scenario(&s).unwrap();
        assert!(r.counters.conserved(), "{}", path.display());
        assert!(r.counters.delivered > 0, "{}", path.display());
        let res = scenario_result(&s, &r);
        assert!(res.passed(), "{}", path.display());
        seen += 1;
    }
    assert!(seen >= 3);
}

#[derive(serde::Deserialize)]
struct CostOnly {
    cost: LookupCostModel,
}

#[test]
fn shipped_calibration_is_the_default() {
    let text = std::fs::read_to_string(configs_dir().join("calibration.toml")).unwrap();
    let parsed: CostOnly = toml::from_str(&text).unwrap();
    assert_eq!(parsed.cost, LookupCostModel::default());
    let body: String = text
        .lines()
        .filter(|l| !l.starts_with('#'))
        .map(|l| format!("{l}\n"))
        .collect();
    assert_eq!(body, cost_toml(&LookupCostModel::default()));
}

#[test]
fn load_run_emit_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("three.toml");
    std::fs::write(&path, THREE_NODES).unwrap();
    let s = load_scenario(&path).unwrap();
    let r = run_scenario(&s).unwrap();
    let flow = &r.flows[0];
    assert_eq!(flow.rtt_us.len(), 10);
    let res = scenario_result(&s, &r);
    let out = dir.path().join("out");
    let files = emit_outputs(&res, &out).unwrap();
    assert!(files.iter().all(|f| f.exists()));

    for t in &res.tables {
        let text = std::fs::read_to_string(out.join(format!("{}.csv", t.name))).unwrap();
        assert_eq!(text, table_to_csv(t).unwrap());
        assert!(text.ends_with("\r\n"));
        let back = csv_to_table(&t.name, &text).unwrap();
        assert_eq!(&back, t);
    }
    let flows = std::fs::read_to_string(out.join("three_flows.csv")).unwrap();
    assert!(flows.contains("\"echo, \"\"quoted\"\"\""));

    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("three_summary.json")).unwrap()).unwrap();
    assert_eq!(summary["passed"], true);
    assert_eq!(summary["id"], "three");
    assert_eq!(summary["scenario_hash"], s.hash.as_str());
    assert_eq!(summary["files"].as_array().unwrap().len(), files.len() - 1);
}

#[test]
fn same_scenario_twice_is_byte_identical() {
    let s = parse_scenario(&std::fs::read_to_string(configs_dir().join("wan_qos.toml")).unwrap()).unwrap();
    let csv = || {
        let res = scenario_result(&s, &run_scenario(&s).unwrap());
        res.tables.iter().map(|t| table_to_csv(t).unwrap()).collect::<Vec<_>>()
    };
    assert_eq!(csv(), csv());
}

#[test]
fn misspelled_section_names_key_and_line() {
    let src = THREE_NODES.replacen("[[links]]", "[[linkz]]", 1);
    let err = parse_scenario(&src).unwrap_err();
    assert!(err.message.contains("linkz"), "{err}");
    let line = src.lines().position(|l| l.contains("linkz")).unwrap() + 1;
    assert_eq!(err.line, Some(line));
}

#[test]
fn unwritable_output_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("plain-file");
    std::fs::write(&file, "x").unwrap();
    assert!(prepare_dir(&file.join("sub")).is_err());
    let s = parse_scenario(THREE_NODES).unwrap();
    let res = scenario_result(&s, &run_scenario(&s).unwrap());
    assert!(emit_outputs(&res, &file.join("sub")).is_err());
}
