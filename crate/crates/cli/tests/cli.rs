use std::io::Write;
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Output, Stdio};
use std::time::{Duration, Instant};

use serde_json::{json, Value};

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn chronomem(args: &[&str], stdin: &str) -> Output {
    let mut child = Command::new(env!("CARGO_BIN_EXE_chronomem"))
        .args(args)
        .env_remove("CHRONOMEM_CONFIG")
        .env_remove("CHRONOMEM_SERVER")
        .env_remove("CHRONOMEM_TOKEN")
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    child.stdin.take().unwrap().write_all(stdin.as_bytes()).unwrap();
    child.wait_with_output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

/// A config in `dir` that reads the car script and logs to `dir/events.jsonl`.
fn logged_config(dir: &Path) -> PathBuf {
    let config = json!({
        "mock_script": fixture("car/script.jsonl"),
        "log_path": "events.jsonl",
        "retry_base_ms": 1,
    });
    let path = dir.join("config.json");
    std::fs::write(&path, config.to_string()).unwrap();
    path
}

#[test]
fn car_dialogue_matches_golden_transcript() {
    let config = fixture("car/config.json");
    let dialogue = std::fs::read_to_string(fixture("car/dialogue.txt")).unwrap();
    let out = chronomem(&["--config", config.to_str().unwrap(), "chat", "--session", "car"], &dialogue);
    assert!(out.status.success(), "{}", stderr(&out));
    let golden = std::fs::read_to_string(fixture("car/transcript.golden")).unwrap();
    assert_eq!(stdout(&out), golden);
}

#[test]
fn chat_json_skips_blank_lines_and_creates_the_session() {
    let config = fixture("car/config.json");
    let dialogue = "\n   \n/at 1712052000000\nI need a practical car for long drives.\n\n";
    let out = chronomem(
        &["--config", config.to_str().unwrap(), "--format", "json", "chat", "--session", "fresh"],
        dialogue,
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let doc: Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(doc["session_id"], "fresh");
    let exchanges = doc["exchanges"].as_array().unwrap();
    assert_eq!(exchanges.len(), 1);
    assert_eq!(exchanges[0]["ts"], 1712052000000i64);
    assert_eq!(exchanges[0]["iterations_used"], 1);
    assert_eq!(exchanges[0]["final_score"], 0.9);
}

#[test]
fn chat_reports_failed_messages_with_exit_one() {
    let out = chronomem(&["chat", "--at", "5"], "hello there\n");
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("answerer failed on every iteration"), "{}", stderr(&out));
    assert!(stdout(&out).contains("you> hello there"));
}

#[test]
fn eval_on_bundled_suite_prints_full_accuracy() {
    let out = chronomem(&["eval"], "");
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    let header = text.lines().next().unwrap();
    for column in ["ROUGE-1", "ROUGE-2", "ROUGE-L", "accuracy"] {
        assert!(header.contains(column), "{header}");
    }
    let overall = text.lines().find(|l| l.starts_with("overall")).unwrap();
    let cells: Vec<&str> = overall.split_whitespace().collect();
    assert_eq!(cells[1], "4");
    assert_eq!(cells[5], "1.000");
    assert!(text.lines().any(|l| l.starts_with("scripted mock") && l.ends_with("100%")), "{text}");

    let out = chronomem(&["--format", "json", "eval"], "");
    let report: Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(report["summary"]["accuracy"], 1.0);
    assert_eq!(report["scenarios"].as_array().unwrap().len(), 4);
}

#[test]
fn replay_verifies_untampered_log_and_rejects_one_edited_byte() {
    let dir = tempfile::tempdir().unwrap();
    let config = logged_config(dir.path());
    let config = config.to_str().unwrap();
    let dialogue = std::fs::read_to_string(fixture("car/dialogue.txt")).unwrap();
    let out = chronomem(&["--config", config, "chat", "--session", "car"], &dialogue);
    assert!(out.status.success(), "{}", stderr(&out));

    let log = dir.path().join("events.jsonl");
    let log_arg = log.to_str().unwrap();
    let out = chronomem(&["--config", config, "replay", log_arg, "--verify"], "");
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert!(stdout(&out).starts_with("verified: "));

    let out = chronomem(&["--config", config, "--format", "json", "replay", log_arg], "");
    let summary: Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(summary["sealed"], true);
    assert!(summary["node_count"].as_u64().unwrap() > 0);

    let original = std::fs::read(&log).unwrap();
    let at = original.windows(6).position(|w| w == b"hybrid").unwrap() + 4;
    let mut tampered = original.clone();
    tampered[at] = b'x';
    std::fs::write(&log, &tampered).unwrap();
    let out = chronomem(&["--config", config, "replay", log_arg, "--verify"], "");
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("digest mismatch"), "{}", stderr(&out));

    let out = chronomem(&["--config", config, "--format", "json", "replay", log_arg, "--verify"], "");
    assert_eq!(out.status.code(), Some(1));
    let doc: Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(doc["verified"], false);
}

#[test]
fn reopened_log_continues_and_reseals() {
    let dir = tempfile::tempdir().unwrap();
    let config = logged_config(dir.path());
    let config = config.to_str().unwrap();
    let doc = dir.path().join("brochure.txt");
    std::fs::write(&doc, "Eight people fit in the Toyota Highlander Hybrid.").unwrap();
    for _ in 0..2 {
        let out = chronomem(&["--config", config, "ingest", doc.to_str().unwrap(), "--at", "100"], "");
        assert!(out.status.success(), "{}", stderr(&out));
        assert!(stdout(&out).starts_with("brochure.txt: 1 chunks"), "{}", stdout(&out));
    }
    let log = dir.path().join("events.jsonl");
    let out = chronomem(&["--config", config, "replay", log.to_str().unwrap(), "--verify"], "");
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(chronomem(&["frobnicate"], "").status.code(), Some(2));
    assert_eq!(chronomem(&["chat", "--at", "0"], "").status.code(), Some(2));
    assert_eq!(chronomem(&["--server", "http://127.0.0.1:9", "eval"], "").status.code(), Some(2));
    assert_eq!(chronomem(&["--config", "/nonexistent/config.json", "eval"], "").status.code(), Some(2));
    assert_eq!(chronomem(&["ingest"], "").status.code(), Some(2));
}

#[test]
fn missing_inputs_exit_one() {
    let out = chronomem(&["ingest", "/nonexistent/doc.txt"], "");
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("/nonexistent/doc.txt"));
    assert_eq!(chronomem(&["replay", "/nonexistent/events.jsonl"], "").status.code(), Some(1));
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("events.jsonl");
    std::fs::write(&log, "{\"seq\": 2}\n").unwrap();
    let out = chronomem(&["replay", log.to_str().unwrap()], "");
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("corrupt log"), "{}", stderr(&out));
}

struct Server(Child);

impl Drop for Server {
    fn drop(&mut self) {
        let _ = self.0.kill();
        let _ = self.0.wait();
    }
}

#[test]
fn remote_chat_matches_in_process_transcript() {
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let addr = format!("127.0.0.1:{port}");
    let config = fixture("car/config.json");
    let _server = Server(
        Command::new(env!("CARGO_BIN_EXE_chronomem"))
            .args(["--config", config.to_str().unwrap(), "serve", "--listen", &addr])
            .stdout(Stdio::null())
            .stderr(Stdio::null())
            .spawn()
            .unwrap(),
    );
    let deadline = Instant::now() + Duration::from_secs(10);
    while std::net::TcpStream::connect(&addr).is_err() {
        assert!(Instant::now() < deadline, "server did not start");
        std::thread::sleep(Duration::from_millis(50));
    }

    let url = format!("http://{addr}");
    let dialogue = std::fs::read_to_string(fixture("car/dialogue.txt")).unwrap();
    let out = chronomem(&["--server", &url, "chat", "--session", "car"], &dialogue);
    assert!(out.status.success(), "{}", stderr(&out));
    let golden = std::fs::read_to_string(fixture("car/transcript.golden")).unwrap();
    assert_eq!(stdout(&out), golden);

    let out = chronomem(&["--server", &url, "chat", "--session", "car", "--at", "9"], "   \n");
    assert!(out.status.success(), "{}", stderr(&out));
}
