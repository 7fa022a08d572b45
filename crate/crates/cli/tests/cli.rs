use std::process::{Command, Output};

fn piwno(root: &std::path::Path, args: &[&str]) -> Output {
    let config = concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/toy_diffusion_reaction.toml");
    Command::new(env!("CARGO_BIN_EXE_piwno"))
        .arg("--output-root")
        .arg(root)
        .args(args)
        .args(["-c", config])
        .output()
        .expect("binary runs")
}

fn json(bytes: &[u8]) -> serde_json::Value {
    serde_json::from_slice(bytes).unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(bytes)))
}

#[test]
fn sample_is_reproducible() {
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    let digests: Vec<_> = dirs
        .iter()
        .map(|d| {
            let out = piwno(d.path(), &["sample", "--solutions", "--set", "n_train=3", "--set", "n_holdout=2"]);
            assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
            let v = json(&out.stdout);
            assert_eq!(v["command"], "sample");
            let run = d.path().join("runs/toy_diffusion_reaction");
            for f in ["config.toml", "inputs.arrays", "solutions.arrays", "manifest.json"] {
                assert!(run.join(f).is_file(), "{f} missing");
            }
            v["result"]["digest"].clone()
        })
        .collect();
    assert!(digests[0].is_string());
    assert_eq!(digests[0], digests[1]);
}

#[test]
fn bad_override_is_a_config_error() {
    let d = tempfile::tempdir().unwrap();
    let out = piwno(d.path(), &["sample", "--set", "wno.levels=9"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(json(&out.stderr)["error"]["kind"], "config");
    assert!(out.stdout.is_empty());
}

#[test]
fn validate_needs_a_trained_run() {
    let d = tempfile::tempdir().unwrap();
    let out = piwno(d.path(), &["validate"]);
    assert!(!out.status.success());
    assert!(json(&out.stderr)["error"]["message"].is_string());
}
