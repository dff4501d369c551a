use std::path::Path;
use std::process::{Command, Output};

use betacoal::cli::{subcommand_flags, EXIT_OK, EXIT_RUNTIME, EXIT_USAGE};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_betacoal")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn rates_prints_oracle_values() {
    let o = run(&["rates", "--alpha", "1.5", "--m", "3"]);
    assert_eq!(o.status.code(), Some(EXIT_OK));
    assert_eq!(stdout(&o), "lambda_{3,2} = 0.75\nlambda_{3,3} = 0.25\nlambda_3 = 2.5\n");
}

#[test]
fn simulate_two_leaves() {
    let o = run(&["simulate", "--alpha", "1.5", "--n", "2", "--s", "2", "--seed", "1"]);
    assert_eq!(o.status.code(), Some(EXIT_OK));
    assert!(stdout(&o).lines().any(|l| l == "tau_n = 1"), "{}", stdout(&o));
}

#[test]
fn theorem1_writes_summary_files() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let args = [
        "theorem1", "--alpha", "1.5", "--n", "200,500", "--reps", "30", "--s", "3", "--seed", "7",
        "--reference-samples", "2000", "--batches", "5", "--out", out.to_str().unwrap(),
    ];
    let o = run(&args);
    assert_eq!(o.status.code(), Some(EXIT_OK), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(out.join("theorem1_summary.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 2 * 3);
    let js = json(&out.join("theorem1_summary.json"));
    assert_eq!(js["rows"].as_array().unwrap().len(), 6);

    let flags = js["provenance"]["flags"].as_object().unwrap();
    for f in subcommand_flags("theorem1") {
        assert!(flags.contains_key(f.as_str()), "missing flag {f}");
    }
    assert_eq!(flags["seed"], "7");

    let again = run(&args);
    assert_eq!(again.status.code(), Some(EXIT_USAGE));
    assert!(String::from_utf8_lossy(&again.stderr).contains("--force"));

    let mut forced = args.to_vec();
    forced.push("--force");
    let before = std::fs::read(out.join("theorem1_summary.json")).unwrap();
    assert_eq!(run(&forced).status.code(), Some(EXIT_OK));
    let after = std::fs::read(out.join("theorem1_summary.json")).unwrap();
    let strip = |b: &[u8]| {
        let mut v = serde_json::from_slice::<serde_json::Value>(b).unwrap();
        v["provenance"]["flags"].as_object_mut().unwrap().remove("force");
        v
    };
    assert_eq!(strip(&before), strip(&after));
}

#[test]
fn provenance_lists_every_flag_for_each_file_command() {
    let dir = tempfile::tempdir().unwrap();
    let cases: [(&str, Vec<&str>, &str); 4] = [
        ("simulate", vec!["--alpha", "1.5", "--n", "50"], "simulate.json"),
        ("lengths", vec!["--alpha", "1.5", "--n", "200", "--reps", "2"], "lengths.json"),
        ("approx-suite", vec!["--alpha", "1.5", "--n", "100,200", "--reps", "2"], "approx_suite.json"),
        ("stable-sample", vec!["--alpha", "1.5", "--count", "5"], "stable_samples.json"),
    ];
    for (cmd, extra, file) in cases {
        let out = dir.path().join(cmd);
        let mut args = vec![cmd];
        args.extend(extra);
        args.extend(["--out", out.to_str().unwrap()]);
        let o = run(&args);
        assert_eq!(o.status.code(), Some(EXIT_OK), "{cmd}: {}", String::from_utf8_lossy(&o.stderr));
        let js = json(&out.join(file));
        let flags = js["provenance"]["flags"].as_object().unwrap();
        assert_eq!(flags["command"], cmd);
        for f in subcommand_flags(cmd) {
            assert!(flags.contains_key(f.as_str()), "{cmd}: missing flag {f}");
        }
    }
}

#[test]
fn exit_codes() {
    assert_eq!(run(&["rates", "--alpha", "2.0", "--m", "3"]).status.code(), Some(EXIT_USAGE));
    assert_eq!(run(&["rates", "--alpha", "1.0", "--m", "3"]).status.code(), Some(EXIT_USAGE));
    assert_eq!(run(&["rates", "--alpha", "1.5", "--bogus"]).status.code(), Some(EXIT_USAGE));
    assert_eq!(run(&["simulate", "--alpha", "1.5", "--n", "1"]).status.code(), Some(EXIT_USAGE));
    assert_eq!(run(&["--threads", "0", "rates", "--alpha", "1.5"]).status.code(), Some(EXIT_USAGE));

    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    std::fs::write(&blocker, "x").unwrap();
    let target = blocker.join("sub");
    let o = run(&["simulate", "--alpha", "1.5", "--n", "20", "--out", target.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(EXIT_RUNTIME));
    assert!(String::from_utf8_lossy(&o.stderr).contains("file"));
}

#[test]
fn help_documents_defaults() {
    for cmd in ["rates", "simulate", "lengths", "approx-suite", "stable-sample", "theorem1"] {
        let o = run(&[cmd, "--help"]);
        assert_eq!(o.status.code(), Some(EXIT_OK));
        let text = stdout(&o);
        assert!(text.contains("--alpha"), "{cmd}");
        assert!(text.contains("[default:"), "{cmd}: {text}");
    }
}

#[test]
fn seed_determines_output() {
    let a = run(&["lengths", "--alpha", "1.5", "--n", "300", "--reps", "3", "--seed", "5"]);
    let b = run(&["--threads", "1", "lengths", "--alpha", "1.5", "--n", "300", "--reps", "3", "--seed", "5"]);
    let c = run(&["lengths", "--alpha", "1.5", "--n", "300", "--reps", "3", "--seed", "6"]);
    assert_eq!(a.stdout, b.stdout);
    assert_ne!(a.stdout, c.stdout);
}
