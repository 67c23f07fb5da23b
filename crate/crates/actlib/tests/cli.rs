mod common;

use std::path::Path;
use std::process::{Command, Output};

use actlib::library::load_library;
use common::fixtures;
use serde_json::Value;

fn actlib(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_actlib")).env_clear().current_dir(dir).args(args).output().unwrap()
}

fn path(p: impl AsRef<Path>) -> String {
    p.as_ref().to_str().unwrap().to_string()
}

fn replay_args(site: &str) -> Vec<String> {
    vec![
        "--provider".into(),
        "replay".into(),
        "--fixtures".into(),
        path(fixtures().join("replay")),
        "--site-spec".into(),
        path(fixtures().join("sites").join(site).join("site.json")),
    ]
}

fn run(dir: &Path, site: &str, rest: &[&str]) -> Output {
    let mut args = replay_args(site);
    args.extend(rest.iter().map(|s| s.to_string()));
    let refs: Vec<&str> = args.iter().map(String::as_str).collect();
    actlib(dir, &refs)
}

fn stdout_json(o: &Output) -> Value {
    serde_json::from_slice(&o.stdout).unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&o.stdout)))
}

#[test]
fn tokens_command_prints_the_reduction() {
    let dir = tempfile::tempdir().unwrap();
    let o = actlib(dir.path(), &["tokens", "--total", "25000", "--calls", "1"]);
    assert_eq!(o.status.code(), Some(0));
    let v = stdout_json(&o);
    assert_eq!(v["reduction-percent"], "87.3%");
    assert_eq!(v["baseline-total"], 197_190);
    assert!(String::from_utf8_lossy(&o.stderr).contains("87%"));
}

#[test]
fn run_serves_a_request_from_the_library() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::copy(fixtures().join("libraries/delta-unravel.json"), dir.path().join("library.json")).unwrap();
    let o =
        run(dir.path(), "delta-like", &["run", "Find flights from Seattle to New York on June 5th, 2025 using miles"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let v = stdout_json(&o);
    assert_eq!(v["status"], "completed-via-api");
    assert_eq!(v["bindings"]["destination"], "NewYork");
    assert_eq!(v["token-totals"]["calls"], 1);
    let store = load_library(dir.path().join("library.json")).unwrap();
    assert_eq!(store.find_by_name("delta.com", "search_flights").unwrap().success_count, 1);

    // The run report doubles as a ledger for the tokens command.
    std::fs::write(dir.path().join("report.json"), &o.stdout).unwrap();
    let t = actlib(dir.path(), &["tokens", "--ledger", "report.json"]);
    assert_eq!(t.status.code(), Some(0));
    assert_eq!(stdout_json(&t)["library-calls"], 1);
}

#[test]
fn failed_request_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::copy(fixtures().join("libraries/delta-unravel.json"), dir.path().join("library.json")).unwrap();
    let o = run(dir.path(), "delta-like", &["run", "Order a large pepperoni pizza for delivery"]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(stdout_json(&o)["status"], "failed");
}

#[test]
fn build_library_with_both_strategies() {
    for (strategy, source) in [("unravel", "unravel"), ("dist-map", "dist-map")] {
        let dir = tempfile::tempdir().unwrap();
        let tasks = path(fixtures().join("tasks/delta-build.json"));
        let o = run(dir.path(), "delta-like", &["--strategy", strategy, "build-library", "--tasks", &tasks]);
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
        let store = load_library(dir.path().join("library.json")).unwrap();
        let names: Vec<&str> = store.records().map(|r| r.api.name.as_str()).collect();
        assert_eq!(names, ["retrieve_trip_information", "search_flights"]);
        assert!(store.records().all(|r| serde_json::to_value(r.source).unwrap() == source));
        assert_eq!(stdout_json(&o)["scripts"].as_array().unwrap().len(), 4);
    }
}

#[test]
fn empty_tasks_file_gives_an_empty_library() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("tasks.json"), "[]").unwrap();
    let o = run(dir.path(), "delta-like", &["build-library", "--tasks", "tasks.json"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(load_library(dir.path().join("library.json")).unwrap().is_empty());
}

#[test]
fn distill_writes_one_document_per_page() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), "shop-like", &["--out", "pages", "distill"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let count = std::fs::read_dir(dir.path().join("pages")).unwrap().count();
    let site = common::site("shop-like");
    assert_eq!(count, site.pages.len());

    let empty = dir.path().join("empty");
    std::fs::create_dir(&empty).unwrap();
    assert_eq!(run(dir.path(), "shop-like", &["distill", "empty"]).status.code(), Some(0));
    assert_eq!(run(dir.path(), "shop-like", &["distill", "nowhere.html"]).status.code(), Some(2));
}

#[test]
fn eval_scores_predictions() {
    let dir = tempfile::tempdir().unwrap();
    let gold = path(fixtures().join("eval/trip-lookup.json"));
    let pred = path(fixtures().join("eval/trip-lookup.predicted.json"));
    let o = actlib(dir.path(), &["eval", "--predicted", &pred, "--gold", &gold]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(stdout_json(&o)["element-accuracy"], 0.8);
    let o = actlib(dir.path(), &["eval", "--predicted", &pred, "--gold", &gold, "--mode", "exact"]);
    assert_eq!(stdout_json(&o)["element-accuracy"], 0.0);
}

#[test]
fn configuration_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let o = actlib(dir.path(), &["--site-spec", "a.json", "--webdriver-url", "http://localhost:4444", "run", "x"]);
    assert_eq!(o.status.code(), Some(2));
    let o = actlib(dir.path(), &["--provider", "replay", "run", "x"]);
    assert_eq!(o.status.code(), Some(2));
    let o = actlib(dir.path(), &["--provider", "replay", "--fixtures", ".", "run", "x"]);
    assert_eq!(o.status.code(), Some(2), "no site source");
}

#[test]
fn config_file_and_environment_layer_under_flags() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::copy(fixtures().join("libraries/delta-unravel.json"), dir.path().join("lib-a.json")).unwrap();
    std::fs::write(
        dir.path().join("actlib.toml"),
        format!(
            "provider = \"replay\"\nfixtures = {:?}\nsite-spec = {:?}\nlibrary = \"missing.json\"\n",
            path(fixtures().join("replay")),
            path(fixtures().join("sites/delta-like/site.json")),
        ),
    )
    .unwrap();
    let request = "Find my reservation with confirmation code DLTX7Y including passenger name Sarah Johnson";
    let o = Command::new(env!("CARGO_BIN_EXE_actlib"))
        .env_clear()
        .env("ACTLIB_LIBRARY", "lib-a.json")
        .current_dir(dir.path())
        .args(["--config", "actlib.toml", "run", request])
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(stdout_json(&o)["status"], "completed-via-api");
    assert!(!dir.path().join("missing.json").exists());
}
