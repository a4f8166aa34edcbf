use std::path::PathBuf;
use std::process::Command;

use posmu_cli::report::{fmt_sig, SIGNIFICANT_DIGITS};
use serde_json::Value;

fn data(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/data").join(name)
}

fn run(args: &[&str], file: &str) -> String {
    let out = Command::new(env!("CARGO_BIN_EXE_posmu")).args(args).arg(data(file)).output().unwrap();
    String::from_utf8(out.stdout).unwrap()
}

fn strip_wall_time(report: &str) -> String {
    report.lines().filter(|l| !l.contains("wall_time_s")).collect::<Vec<_>>().join("\n")
}

const CASES: &[(&[&str], &str)] = &[
    (&["mu"], "swap.json"),
    (&["robust"], "unstable_system.json"),
    (&["robust"], "stable_system.json"),
    (&["sweep", "--grid", "0.01:100:12"], "stable_system.json"),
    (&["dominance"], "resonant.json"),
    (&["fm", "robust"], "fm_fragile.json"),
    (&["fm", "falsify", "--samples", "300", "--seed", "11"], "fm_fragile.json"),
    (&["fm", "simulate"], "fm_robust.json"),
];

#[test]
fn json_reports_are_byte_identical_apart_from_wall_time() {
    for (args, file) in CASES {
        let mut full = vec!["--format", "json"];
        full.extend_from_slice(args);
        let a = run(&full, file);
        let b = run(&full, file);
        assert!(!a.is_empty(), "{args:?}");
        assert_eq!(strip_wall_time(&a), strip_wall_time(&b), "{args:?} {file}");
    }
}

#[test]
fn out_file_matches_stdout() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("report.json");
    let stdout = run(&["--format", "json", "--out", path.to_str().unwrap(), "robust"], "unstable_system.json");
    let written = std::fs::read_to_string(&path).unwrap();
    assert_eq!(strip_wall_time(&stdout), strip_wall_time(&written));
}

fn numbers(v: &Value, out: &mut Vec<String>) {
    match v {
        Value::Number(n) => out.push(match (n.as_i64(), n.as_u64()) {
            (Some(i), _) => i.to_string(),
            (_, Some(u)) => u.to_string(),
            _ => fmt_sig(n.as_f64().unwrap(), SIGNIFICANT_DIGITS),
        }),
        Value::Array(items) => items.iter().for_each(|x| numbers(x, out)),
        Value::Object(map) => map
            .iter()
            .filter(|(k, _)| k.as_str() != "wall_time_s")
            .for_each(|(_, x)| numbers(x, out)),
        _ => {}
    }
}

#[test]
fn text_and_json_carry_the_same_numbers() {
    for (args, file) in CASES {
        let mut full = vec!["--format", "json"];
        full.extend_from_slice(args);
        let json: Value = serde_json::from_str(&run(&full, file)).unwrap();
        full[1] = "text";
        let text = strip_wall_time(&run(&full, file));
        let mut expected = Vec::new();
        numbers(&json, &mut expected);
        let mut rest = text.as_str();
        for n in &expected {
            let at = rest.find(n.as_str()).unwrap_or_else(|| panic!("{args:?}: {n} missing from text report"));
            rest = &rest[at + n.len()..];
        }
    }
}
