use std::io::{BufRead, BufReader};
use std::path::Path;
use std::process::{Command, Stdio};

fn nodeprint(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_nodeprint")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = nodeprint(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn train_fingerprint_attack_verify() {
    let dir = tempfile::tempdir().unwrap();
    let (g, m, fp, bad) =
        (dir.path().join("g.json"), dir.path().join("m.gcnf"), dir.path().join("fp.json"), dir.path().join("bad.gcnf"));
    ok(&["gen-graph", "--seed", "1", "--out", s(&g)]);
    ok(&["train", "--graph", s(&g), "--out", s(&m), "--seed", "1"]);
    ok(&["fingerprint", "--checkpoint", s(&m), "--graph", s(&g), "--mode", "trans-f", "--k", "5", "--out", s(&fp)]);

    let clean = ["verify", "--endpoint", "inproc", "--fingerprints", s(&fp), "--checkpoint", s(&m), "--graph", s(&g)];
    let report: serde_json::Value = serde_json::from_str(&ok(&clean)).unwrap();
    assert_eq!(report["b"], 1);

    // Flip the first bias exponent until a seed yields a detectable change.
    let mut detected = false;
    for seed in 0..10 {
        let seed = seed.to_string();
        ok(&["attack", "--checkpoint", s(&m), "--graph", s(&g), "--kind", "bfa-f", "--seed", &seed, "--out", s(&bad)]);
        let mut args = clean.to_vec();
        args.extend(["--attacker", "tampered", "--attack-checkpoint", s(&bad)]);
        let out = nodeprint(&args);
        match out.status.code() {
            Some(0) => {}
            Some(1) => {
                detected = true;
                break;
            }
            c => panic!("unexpected exit {c:?}"),
        }
    }
    assert!(detected);
}

#[test]
fn inductive_round_trip_and_http() {
    let dir = tempfile::tempdir().unwrap();
    let p = |n: &str| dir.path().join(n);
    let (g, sh, m, fp) = (p("g.json"), p("shadow.json"), p("m.gcnf"), p("fp.json"));
    ok(&["gen-graph", "--seed", "2", "--out", s(&g)]);
    ok(&["shadow", "--graph", s(&g), "--seed", "3", "--out", s(&sh)]);
    ok(&["train", "--graph", s(&g), "--out", s(&m), "--epochs", "100"]);
    ok(&["fingerprint", "--checkpoint", s(&m), "--shadow", s(&sh), "--mode", "ind-f", "--k", "3", "--budget", "2", "--out", s(&fp)]);

    let mut child = Command::new(env!("CARGO_BIN_EXE_nodeprint"))
        .args(["serve", "--mode", "inductive", "--checkpoint", s(&m), "--port", "0"])
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stderr.take().unwrap()).read_line(&mut line).unwrap();
    let url = line.trim().strip_prefix("listening on ").unwrap().to_string();
    let out = nodeprint(&["verify", "--endpoint", &url, "--fingerprints", s(&fp), "--shadow", s(&sh)]);
    child.kill().unwrap();
    child.wait().unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn unreachable_endpoint_is_inconclusive() {
    let dir = tempfile::tempdir().unwrap();
    let fp = dir.path().join("fp.json");
    std::fs::write(&fp, r#"{"mode":"transductive","method":"F","seed":0,"sample_size":1,"items":[{"node":0,"label":0,"score":1.0}]}"#)
        .unwrap();
    let out = nodeprint(&["verify", "--endpoint", "http://127.0.0.1:9", "--fingerprints", s(&fp)]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn bypass_analysis() {
    let v: serde_json::Value =
        serde_json::from_str(&ok(&["analyze", "bypass", "--n", "100", "--m-a", "60", "--m-v", "2"])).unwrap();
    let exact = v["exact_transductive"].as_f64().unwrap();
    assert!((exact - 60.0 * 59.0 / 9900.0).abs() < 1e-12);
}
