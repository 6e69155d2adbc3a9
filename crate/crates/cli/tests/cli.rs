use std::collections::BTreeMap;
use std::path::Path;
use std::process::{Command, Output};

use rope_probe::io::save_spectrum;
use rope_probe::sampling::{random_spectrum, stream_rng, SpectrumKind};
use rope_probe::RopeConfig;
use tempfile::{tempdir, TempDir};

fn probe(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_probe"))
        .args(args)
        .current_dir(dir)
        .env_remove("PROBE_SEED")
        .env_remove("PROBE_API_TOKEN")
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn with_keys() -> TempDir {
    let dir = tempdir().unwrap();
    let c = RopeConfig::new(32, 1e4, 8192).unwrap();
    let mut rng = stream_rng(3, 0);
    for name in ["k1.json", "k2.json"] {
        let s = random_spectrum(&c, SpectrumKind::RandomQk, &mut rng).unwrap();
        save_spectrum(&dir.path().join(name), &s, &BTreeMap::new()).unwrap();
    }
    dir
}

#[test]
fn failure_report_json() {
    let dir = with_keys();
    let o = probe(
        &[
            "failure",
            "--mode",
            "pos-inv",
            "--spectrum",
            "k1.json",
            "--M",
            "1024",
            "--mc-samples",
            "200",
            "--out",
            "r.json",
        ],
        dir.path(),
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("r.json")).unwrap()).unwrap();
    assert_eq!(v["schema_version"], 1);
    let r = &v["data"][0];
    assert_eq!(r["mode"], "pos-inv");
    assert!(r["lower_bound"].as_f64().unwrap() > 0.0);
    assert!(r["mc_estimate"]["estimate"].is_number());
}

#[test]
fn pos_alias_heatmap_has_one_row_per_cell() {
    let dir = with_keys();
    let o = probe(
        &[
            "failure",
            "--mode",
            "pos-alias",
            "--spectrum",
            "k1.json",
            "--M",
            "2048",
            "--dtype",
            "bf16",
            "--threshold-mode",
            "tableraw",
            "--out",
            "r.csv",
            "--heatmap",
            "h.csv",
            "--pairs",
            "p.csv",
        ],
        dir.path(),
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let heat = std::fs::read_to_string(dir.path().join("h.csv")).unwrap();
    assert_eq!(heat.lines().count(), 200 * 200 + 1);
    let total: u64 = heat.lines().skip(1).map(|l| l.rsplit(',').next().unwrap().parse::<u64>().unwrap()).sum();
    let pairs = std::fs::read_to_string(dir.path().join("p.csv")).unwrap();
    assert_eq!(total as usize, pairs.lines().count() - 1);
    let report = std::fs::read_to_string(dir.path().join("r.csv")).unwrap();
    assert!(report.starts_with("index,mode,h,base,context"));
    assert!(report.lines().nth(1).unwrap().contains(&format!(",{total},")));
}

#[test]
fn two_key_modes_and_custom_dtype() {
    let dir = with_keys();
    for mode in ["tok-alias", "invariance", "tok-inv"] {
        let o = probe(
            &[
                "failure",
                "--mode",
                mode,
                "--spectrum",
                "k1.json",
                "--spectrum2",
                "k2.json",
                "--M",
                "1024",
                "--dtype-bits",
                "8,7",
                "--out",
                "r.json",
            ],
            dir.path(),
        );
        assert_eq!(code(&o), 0, "{mode}: {}", String::from_utf8_lossy(&o.stderr));
    }
    let o = probe(
        &[
            "failure",
            "--mode",
            "tok-alias",
            "--spectrum",
            "k1.json",
            "--spectrum2",
            "k2.json",
            "--M",
            "512",
            "--out",
            "r.json",
            "--positions",
            "pos.csv",
        ],
        dir.path(),
    );
    assert_eq!(code(&o), 0);
    let pos = std::fs::read_to_string(dir.path().join("pos.csv")).unwrap();
    assert_eq!(pos.lines().next().unwrap(), "m,failed,cumulative_prob");
    assert_eq!(pos.lines().count(), 513);
}

#[test]
fn exit_codes() {
    let dir = with_keys();
    // second key missing
    let o = probe(
        &["failure", "--mode", "tok-alias", "--spectrum", "k1.json", "--M", "512", "--out", "r.json"],
        dir.path(),
    );
    assert_eq!(code(&o), 2);
    // unknown mode is a usage error
    let o = probe(&["failure", "--mode", "nope", "--spectrum", "k1.json", "--M", "512", "--out", "r.json"], dir.path());
    assert_eq!(code(&o), 2);
    // missing file
    let o = probe(
        &["failure", "--mode", "pos-inv", "--spectrum", "absent.json", "--M", "512", "--out", "r.json"],
        dir.path(),
    );
    assert_eq!(code(&o), 4);
    // malformed file
    std::fs::write(
        dir.path().join("bad.json"),
        r#"{"h": 2, "base": 10000, "context_limit": 100, "amplitudes": [1, 1]}"#,
    )
    .unwrap();
    let o =
        probe(&["failure", "--mode", "pos-inv", "--spectrum", "bad.json", "--M", "64", "--out", "r.json"], dir.path());
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("phases"));
    // zero spectrum
    std::fs::write(
        dir.path().join("zero.json"),
        r#"{"h": 2, "base": 10000, "context_limit": 100, "amplitudes": [0, 0], "phases": [0, 0]}"#,
    )
    .unwrap();
    let o =
        probe(&["failure", "--mode", "pos-inv", "--spectrum", "zero.json", "--M", "64", "--out", "r.json"], dir.path());
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
    // unwritable output
    let o = probe(
        &["failure", "--mode", "pos-inv", "--spectrum", "k1.json", "--M", "64", "--out", "missing/dir/r.json"],
        dir.path(),
    );
    assert_eq!(code(&o), 4);
}

#[test]
fn sweep_is_reproducible_and_seed_env_applies() {
    let dir = tempdir().unwrap();
    std::fs::write(
        dir.path().join("grid.json"),
        r#"{"h": 16, "M": [256, 512], "B": [1e4, 1e5], "dtypes": ["bf16", "fp16"], "seed": 4, "mc_samples": 100,
            "spectrum": "random-qk", "inversion_threshold": 0.3}"#,
    )
    .unwrap();
    for out in ["a.csv", "b.csv"] {
        assert_eq!(code(&probe(&["sweep", "--grid", "grid.json", "--out", out], dir.path())), 0);
    }
    let a = std::fs::read(dir.path().join("a.csv")).unwrap();
    assert_eq!(a, std::fs::read(dir.path().join("b.csv")).unwrap());
    assert_eq!(String::from_utf8_lossy(&a).lines().count(), 1 + 2 * 2 * 2 * 5);

    let o = Command::new(env!("CARGO_BIN_EXE_probe"))
        .args(["sweep", "--grid", "grid.json", "--out", "c.csv"])
        .current_dir(dir.path())
        .env("PROBE_SEED", "99")
        .output()
        .unwrap();
    assert_eq!(code(&o), 0);
    assert_ne!(a, std::fs::read(dir.path().join("c.csv")).unwrap());

    assert_eq!(code(&probe(&["sweep", "--grid", "grid.json", "--out", "s.json"], dir.path())), 0);
    let v: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("s.json")).unwrap()).unwrap();
    assert_eq!(v["smallest_context"].as_array().unwrap().len(), 2);

    std::fs::write(dir.path().join("typo.json"), r#"{"h": 16, "M": [256], "B": [1e4], "sead": 1}"#).unwrap();
    assert_eq!(code(&probe(&["sweep", "--grid", "typo.json", "--out", "t.csv"], dir.path())), 2);
}

#[test]
fn indexing_run_and_score() {
    let dir = tempdir().unwrap();
    let run = |responder: &str, out: &str| {
        probe(
            &["indexing", "run", "--responder", responder, "--lengths", "4..64x4", "--seed", "7", "--out", out],
            dir.path(),
        )
    };
    assert_eq!(code(&run("perfect", "p.json")), 0);
    let o = probe(&["indexing", "score", "p.json", "--out", "s.csv"], dir.path());
    assert_eq!(code(&o), 0);
    let csv = std::fs::read_to_string(dir.path().join("s.csv")).unwrap();
    let lines: Vec<_> = csv.lines().collect();
    assert_eq!(lines[0], "length,lists,trials,token_estimate_mean,accuracy_mean,accuracy_std");
    assert_eq!(lines.len(), 4);
    for l in &lines[1..] {
        assert!(l.ends_with(",1.0,0.0"), "{l}");
    }

    assert_eq!(code(&run("random", "r1.json")), 0);
    assert_eq!(code(&run("random", "r2.json")), 0);
    assert_eq!(std::fs::read(dir.path().join("r1.json")).unwrap(), std::fs::read(dir.path().join("r2.json")).unwrap());

    assert_eq!(code(&run("constant:0", "c.json")), 0);
    assert_eq!(code(&run("oracle", "x.json")), 2);
    assert_eq!(code(&probe(&["indexing", "run", "--lengths", "4", "--out", "y.json"], dir.path())), 2);
}
