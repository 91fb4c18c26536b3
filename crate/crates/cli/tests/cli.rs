use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn effact(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_effact"))
        .args(args)
        .current_dir(dir)
        .env_remove("EFFACT_HW")
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = effact(dir, args);
    assert!(
        out.status.success(),
        "effact {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn json(dir: &Path, args: &[&str]) -> Value {
    serde_json::from_str(&ok(dir, args)).unwrap()
}

/// A temp dir holding a desk-size key switch and a small hardware file.
fn setup() -> (TempDir, PathBuf) {
    let t = tempfile::tempdir().unwrap();
    let d = t.path().to_path_buf();
    ok(&d, &["gen", "keyswitch", "--N", "1024", "--L", "4", "--dnum", "2", "-o", "ks.eir"]);
    fs::write(d.join("small.hw"), "sram_slots = 16\n[units]\nntt = 1\n").unwrap();
    (t, d)
}

#[test]
fn compile_then_simulate() {
    let (_t, d) = setup();
    ok(&d, &["compile", "ks.eir", "--hw", "small.hw", "-o", "ks.easm"]);
    assert!(fs::read_to_string(d.join("ks.easm")).unwrap().starts_with(".form allocated"));
    ok(&d, &["sim", "ks.easm", "--hw", "small.hw", "--json", "out.json"]);
    let r: Value = serde_json::from_str(&fs::read_to_string(d.join("out.json")).unwrap()).unwrap();
    let cycles = r["cycles"].as_u64().unwrap();
    assert!(cycles > 0);
    assert!(cycles >= r["critical_path"].as_u64().unwrap());

    // The binary encoding simulates identically, and IR input is compiled first.
    ok(&d, &["compile", "ks.eir", "--hw", "small.hw", "-o", "ks.ebin"]);
    assert_eq!(json(&d, &["sim", "ks.ebin", "--hw", "small.hw", "--json"]), r);
    assert_eq!(json(&d, &["sim", "ks.eir", "--hw", "small.hw", "--json"]), r);
}

#[test]
fn sweep_runtime_is_monotone() {
    let (_t, d) = setup();
    let csv = ok(&d, &["sweep", "ks.eir", "--slots", "8,16,32,64"]);
    let mut lines = csv.lines();
    assert!(lines.next().unwrap().starts_with("slots,cycles,"));
    let cycles: Vec<u64> = lines.map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
    assert_eq!(cycles.len(), 4);
    assert!(cycles.windows(2).all(|w| w[1] <= w[0]), "{cycles:?}");
}

#[test]
fn artifacts_are_reproducible() {
    let (_t, d) = setup();
    for k in 0..2 {
        ok(&d, &["gen", "random", "--seed", "7", "-o", &format!("r{k}.eir")]);
        ok(&d, &["compile", "ks.eir", "-o", &format!("ks{k}.ebin")]);
        ok(&d, &["exec", "ks.eir", "--seed", "3", "-o", &format!("m{k}.emem")]);
        ok(&d, &["sim", "ks.eir", "--trace", &format!("t{k}.csv"), "--json", &format!("s{k}.json")]);
    }
    for f in ["r{}.eir", "ks{}.ebin", "m{}.emem", "t{}.csv", "s{}.json"] {
        let a = fs::read(d.join(f.replace("{}", "0"))).unwrap();
        let b = fs::read(d.join(f.replace("{}", "1"))).unwrap();
        assert!(!a.is_empty() && a == b, "{f} differs between runs");
    }
    ok(&d, &["gen", "random", "--seed", "8", "-o", "r2.eir"]);
    assert_ne!(fs::read(d.join("r0.eir")).unwrap(), fs::read(d.join("r2.eir")).unwrap());
}

#[test]
fn exec_reads_memory_images() {
    let (_t, d) = setup();
    ok(&d, &["compile", "ks.eir", "-o", "ks.easm"]);
    // Fill the inputs once, then run both the IR and the compiled program on
    // that image.
    ok(&d, &["exec", "ks.eir", "--seed", "5", "-o", "ir.emem"]);
    let ir = json(&d, &["exec", "ks.eir", "--mem", "ir.emem", "--json"]);
    let asm = json(&d, &["exec", "ks.easm", "--mem", "ir.emem", "--json"]);
    assert!(asm["vector_ops"].as_u64().unwrap() < ir["vector_ops"].as_u64().unwrap());
    let written = |v: &Value, name: &str| {
        v["regions"]
            .as_array()
            .unwrap()
            .iter()
            .find(|r| r["name"] == name)
            .map(|r| r["written"].as_u64().unwrap())
    };
    assert_eq!(written(&asm, "k0"), Some(4));
    assert_eq!(written(&ir, "k1"), Some(4));
}

#[test]
fn pass_flags_and_hw_env() {
    let (_t, d) = setup();
    let all = json(&d, &["compile", "ks.eir", "--json"]);
    assert!(all["stats"]["peephole"]["fused"].as_u64().unwrap() > 0);
    assert_eq!(all["sram_slots"], 64);
    let none = json(
        &d,
        &["compile", "ks.eir", "--no-pre", "--no-propagate", "--no-merge", "--no-streaming", "--slots", "24", "--json"],
    );
    let s = &none["stats"];
    assert_eq!(s["peephole"]["fused"], 0);
    assert_eq!(s["pre_removed"], 0);
    assert_eq!(s["streaming"]["links"], 0);
    assert_eq!(none["sram_slots"], 24);
    assert_eq!(none["passes"]["pre"], false);

    let out = Command::new(env!("CARGO_BIN_EXE_effact"))
        .args(["compile", "ks.eir", "--json"])
        .current_dir(&d)
        .env("EFFACT_HW", "small.hw")
        .output()
        .unwrap();
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["sram_slots"], 16);
}

#[test]
fn analyze_partitions_the_mix() {
    let (_t, d) = setup();
    let a = json(&d, &["analyze", "ks.eir", "--json"]);
    let total = a["instructions"].as_u64().unwrap();
    let sum: u64 = a["mix"].as_array().unwrap().iter().map(|r| r["count"].as_u64().unwrap()).sum();
    assert_eq!(sum, total);
    assert!(a["max_liveness"].as_u64().unwrap() > 0);
    assert!(a["compile"]["emitted"].as_u64().unwrap() > 0);
    let text = ok(&d, &["analyze", "ks.eir"]);
    assert!(text.contains("BC_MULT") && text.contains("max liveness"));
}

#[test]
fn failures_name_their_stage() {
    let (_t, d) = setup();
    let code = |args: &[&str]| effact(&d, args).status.code();
    let stderr = |args: &[&str]| String::from_utf8(effact(&d, args).stderr).unwrap();

    assert_eq!(code(&["compile", "--bogus", "ks.eir"]), Some(2));
    assert_eq!(code(&["frobnicate"]), Some(2));
    assert_eq!(code(&["sweep", "ks.eir", "--slots", "8,x"]), Some(2));

    assert_eq!(code(&["compile", "missing.eir"]), Some(1));
    assert!(stderr(&["compile", "missing.eir"]).starts_with("effact: read: "));

    fs::write(d.join("bad.eir"), ".form ir\n.n 16\n%a = frob %b\n").unwrap();
    assert_eq!(code(&["compile", "bad.eir"]), Some(1));
    assert!(stderr(&["compile", "bad.eir"]).starts_with("effact: parse: "));

    fs::write(d.join("bad.hw"), "lanes = 0\n").unwrap();
    assert!(stderr(&["compile", "ks.eir", "--hw", "bad.hw"]).starts_with("effact: hw: "));

    ok(&d, &["compile", "ks.eir", "--slots", "32", "-o", "ks.easm"]);
    assert!(stderr(&["sim", "ks.easm", "--slots", "4"]).starts_with("effact: sim: "));
    assert!(stderr(&["compile", "ks.easm"]).starts_with("effact: compile: "));
    assert!(stderr(&["gen", "helr", "--N", "1000"]).starts_with("effact: gen: "));
}
