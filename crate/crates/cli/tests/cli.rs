use std::path::PathBuf;
use std::process::{Command, Output};

fn gridalloc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gridalloc"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_doc(name: &str, body: &str) -> PathBuf {
    let path = std::env::temp_dir().join(format!("gridalloc-{}-{name}.json", std::process::id()));
    std::fs::write(&path, body).unwrap();
    path
}

fn csv_rows(bytes: &[u8]) -> (Vec<String>, Vec<Vec<String>>) {
    let mut reader = csv::Reader::from_reader(bytes);
    let header = reader.headers().unwrap().iter().map(String::from).collect();
    let rows = reader
        .records()
        .map(|r| r.unwrap().iter().map(String::from).collect())
        .collect();
    (header, rows)
}

const TWO_NODE: &str = r#"{
  "nodes": [{ "id": 10, "p0": 0.5 }, { "id": 20, "p0": -0.5 }],
  "edges": [{ "tail": 10, "head": 20, "b": 2.0 }],
  "damping": { "M": 20.0, "C": 10.0 },
  "targets": [0.1]
}"#;

#[test]
fn malformed_config_exits_with_validation_code() {
    let out = gridalloc(&["solve", "--config", "MCX"]);
    assert_eq!(out.status.code(), Some(2));
    let out = gridalloc(&["solve", "--config", "MCC"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn strict_solve_rejects_infeasible_state() {
    let doc = write_doc(
        "weak",
        r#"{
  "nodes": [{ "id": 1, "p0": 3.0 }, { "id": 2, "p0": -3.0 }],
  "edges": [{ "tail": 1, "head": 2, "b": 1.0 }],
  "damping": { "M": 20.0, "C": 10.0 }
}"#,
    );
    let path = doc.to_str().unwrap();
    let lenient = gridalloc(&["--network", path, "solve", "--config", "MC"]);
    assert_eq!(lenient.status.code(), Some(0));
    let report: serde_json::Value = serde_json::from_slice(&lenient.stdout).unwrap();
    assert_eq!(report["feasible"], false);
    let strict = gridalloc(&["--network", path, "solve", "--config", "MC", "--strict"]);
    assert_eq!(strict.status.code(), Some(3));
}

#[test]
fn learn_writes_one_row_per_step() {
    let out = gridalloc(&["learn", "--schedule", "linear:5", "--steps", "300", "--seed", "3"]);
    assert!(out.status.success());
    let (header, rows) = csv_rows(&out.stdout);
    assert_eq!(header, ["t", "eta", "chosen_unit", "cfg", "potential", "feasible"]);
    assert_eq!(rows.len(), 300);
    for (t, row) in rows.iter().enumerate() {
        assert_eq!(row[0], t.to_string());
        let id: i64 = row[2].parse().unwrap();
        assert!((1..=6).contains(&id));
        assert_eq!(row[3].len(), 6);
    }
    let again = gridalloc(&["learn", "--schedule", "linear:5", "--steps", "300", "--seed", "3"]);
    assert_eq!(out.stdout, again.stdout);
}

#[test]
fn learn_rejects_bad_schedule() {
    let out = gridalloc(&["learn", "--schedule", "cubic:2"]);
    assert_eq!(out.status.code(), Some(2));
    let out = gridalloc(&["learn", "--schedule", "linear:0"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn batch_learning_reports_success_rate() {
    let out = gridalloc(&["learn", "--runs", "5", "--steps", "100"]);
    assert!(out.status.success());
    let (header, rows) = csv_rows(&out.stdout);
    assert_eq!(header[0], "seed");
    assert_eq!(rows.len(), 5);
    let summary: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    let rate = summary["success_rate"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&rate));
}

#[test]
fn enumerate_lists_every_configuration() {
    let out = gridalloc(&["enumerate"]);
    assert!(out.status.success());
    let (header, rows) = csv_rows(&out.stdout);
    assert_eq!(header, ["cfg", "potential", "is_nash", "is_maximizer", "feasible"]);
    assert_eq!(rows.len(), 64);
    let maximizers: Vec<_> = rows.iter().filter(|r| r[3] == "true").map(|r| r[0].clone()).collect();
    assert_eq!(maximizers, ["MCCCCM"]);
}

#[test]
fn enumerate_size_guard() {
    let nodes: Vec<String> = (1..=21).map(|i| format!(r#"{{ "id": {i}, "p0": 0.0 }}"#)).collect();
    let edges: Vec<String> = (1..21)
        .map(|i| format!(r#"{{ "tail": {i}, "head": {}, "b": 5.0 }}"#, i + 1))
        .collect();
    let targets = vec!["0.0"; 20].join(", ");
    let doc = write_doc(
        "large",
        &format!(
            r#"{{ "nodes": [{}], "edges": [{}], "damping": {{ "M": 20.0, "C": 10.0 }}, "targets": [{targets}] }}"#,
            nodes.join(", "),
            edges.join(", ")
        ),
    );
    let out = gridalloc(&["--network", doc.to_str().unwrap(), "enumerate"]);
    assert_eq!(out.status.code(), Some(4));
    let out = gridalloc(&["--network", doc.to_str().unwrap(), "gibbs", "--eta", "1"]);
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn damping_overrides_warn_when_unconventional() {
    let out = gridalloc(&["--damping-m", "10", "--damping-c", "10", "enumerate"]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("warning"));
}

#[test]
fn two_node_margin_report() {
    let doc = write_doc("two", TWO_NODE);
    let out = gridalloc(&["--network", doc.to_str().unwrap(), "margin", "--alpha", "1.0"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let (header, rows) = csv_rows(&out.stdout);
    assert_eq!(
        header,
        ["cfg", "margin_closed_form", "margin_exact", "delta_flow_limit", "effective_margin"]
    );
    assert_eq!(rows.len(), 4);
    for row in &rows {
        let exact: f64 = row[2].parse().unwrap();
        let closed: f64 = row[1].parse().unwrap();
        assert!(exact <= closed || (exact.is_infinite() && closed.is_infinite()));
    }
    let text = String::from_utf8_lossy(&out.stderr);
    assert!(!text.contains("\"reference\""));
}

#[test]
fn margin_warns_below_floor() {
    let out = gridalloc(&["margin", "--alpha", "0.3"]);
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stderr);
    assert!(text.contains("alpha below calibrated floor"));
}

#[test]
fn gibbs_columns_and_diagnostics() {
    let out = gridalloc(&["gibbs", "--eta", "5"]);
    assert!(out.status.success());
    let (header, rows) = csv_rows(&out.stdout);
    assert_eq!(header, ["state_index", "cfg_string", "stationary_prob", "gibbs_prob"]);
    assert_eq!(rows.len(), 64);
    let total: f64 = rows.iter().map(|r| r[2].parse::<f64>().unwrap()).sum();
    assert!((total - 1.0).abs() < 1e-6);
    let diag: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    let tv = diag["per_eta"][0]["total_variation"].as_f64().unwrap();
    assert!((tv - 0.5149392974639697).abs() < 1e-9);
}

#[test]
fn output_file_and_unknown_network() {
    let path = std::env::temp_dir().join(format!("gridalloc-{}-solve.json", std::process::id()));
    let out = gridalloc(&["--out", path.to_str().unwrap(), "solve", "--config", "MMMMMM"]);
    assert!(out.status.success());
    assert!(out.stdout.is_empty());
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    assert_eq!(report["config"], "MMMMMM");

    let out = gridalloc(&["--network", "/nonexistent/net.json", "solve", "--config", "MC"]);
    assert_eq!(out.status.code(), Some(2));
}
