use std::path::Path;
use std::process::{Command, Output};

fn epimatch(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_epimatch")).args(args).env_remove("EPIMATCH_SEED").output().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn manifest(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

#[test]
fn bad_arguments_exit_with_code_two() {
    assert_eq!(epimatch(&["finetune", "--no-such-flag"]).status.code(), Some(2));
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("x");
    let o = epimatch(&["synth", "--domain", "C", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    let o = epimatch(&["pose", "--matches", "Cargo.toml", "--k1", "1,2,3", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn missing_checkpoint_reports_a_categorized_error() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("a");
    let o = epimatch(&["synth", "--domain", "A", "--pairs", "2", "--seed", "1", "--out", data.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let missing = tmp.path().join("none.ckpt");
    let o = epimatch(&[
        "eval",
        "--checkpoint",
        missing.to_str().unwrap(),
        "--data",
        data.to_str().unwrap(),
        "--out",
        tmp.path().join("ev").to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).starts_with("error["), "{}", stderr(&o));
}

#[test]
fn flags_override_the_config_file_and_env_seed_applies() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("run.toml");
    std::fs::write(&cfg, "seed = 9\n[synth]\ndomain = \"B\"\npairs = 3\n").unwrap();
    let out = tmp.path().join("s1");
    let o = epimatch(&["--config", cfg.to_str().unwrap(), "synth", "--pairs", "2", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let m = manifest(&out);
    assert_eq!(m["seeds"]["scene"], 9);
    assert_eq!(std::fs::read_dir(out.join("pairs")).unwrap().count(), 2);

    let out2 = tmp.path().join("s2");
    let o = Command::new(env!("CARGO_BIN_EXE_epimatch"))
        .args(["--config", cfg.to_str().unwrap(), "synth", "--out", out2.to_str().unwrap()])
        .env("EPIMATCH_SEED", "4")
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(manifest(&out2)["seeds"]["scene"], 4);
    assert_eq!(std::fs::read_dir(out2.join("pairs")).unwrap().count(), 3);
}

#[test]
fn unknown_config_keys_are_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.toml");
    std::fs::write(&cfg, "[train]\nepoch = 3\n").unwrap();
    let o = epimatch(&["--config", cfg.to_str().unwrap(), "gradcheck", "--out", tmp.path().join("g").to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("config"), "{}", stderr(&o));
}

#[test]
fn gradcheck_detects_a_sign_flip() {
    let tmp = tempfile::tempdir().unwrap();
    let ok = tmp.path().join("ok");
    let args = ["--epipolar-instances", "50", "--matcher-instances", "2"];
    let o = epimatch(&[&["gradcheck"], &args[..], &["--out", ok.to_str().unwrap()]].concat());
    assert!(o.status.success(), "{}", stderr(&o));
    let bad = tmp.path().join("bad");
    let o = epimatch(&[&["gradcheck", "--sign-flip"], &args[..], &["--out", bad.to_str().unwrap()]].concat());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("gradcheck"), "{}", stderr(&o));
}
