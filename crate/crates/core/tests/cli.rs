use std::path::Path;
use std::process::{Command, Output};

use kolmo::grid::GridFunction;

const MEASURE: &str = r#"{
  "domain": {"m": 1, "psi": {"family": "flat"}},
  "field": {"m": 1, "family": "constant", "matrix": [[1]], "kappa": 1},
  "pole": {"x": [1], "y": [0], "t": 0},
  "kind": "K",
  "partition": {"partition": "bins", "lo": [0, -4], "width": [1, 1], "count": [4, 4]},
  "sde": {"max_time": 1000, "n_paths": 5000,
          "step": {"policy": "adaptive", "dt_min": 1e-7, "dt_max": 10, "frac": 0.1}},
  "seed": 3
}"#;

const SOLVE: &str = r#"{
  "domain": {"m": 1, "psi": {"family": "flat"}},
  "field": {"m": 1, "family": "constant", "matrix": [[1]], "kappa": 1},
  "solver": {"kind": "kolmogorov", "box": {"x": [0, 1], "y": [-1, 1], "t": [0, 0.5]},
             "hx": 0.125, "hy": 0.125},
  "data": {"family": "affine", "coeffs": [1, 0, 0]}
}"#;

fn kolmo(args: &[&str], envs: &[(&str, &Path)], cwd: &Path) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_kolmo"));
    cmd.args(args).current_dir(cwd).env_remove(kolmo::cli::OUT_DIR_ENV);
    for (k, v) in envs {
        cmd.env(k, v);
    }
    cmd.output().expect("spawn kolmo")
}

fn write(dir: &Path, name: &str, body: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, body).unwrap();
    p.to_string_lossy().into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn measure_output_is_identical_across_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "m.json", MEASURE);
    let mut docs = Vec::new();
    for threads in ["1", "4"] {
        let out = dir.path().join(format!("t{threads}"));
        let o = kolmo(
            &[
                "measure",
                "--config",
                &cfg,
                "--threads",
                threads,
                "--out",
                out.to_str().unwrap(),
            ],
            &[],
            dir.path(),
        );
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        docs.push((
            std::fs::read(out.join("measure.json")).unwrap(),
            std::fs::read(out.join("measure.csv")).unwrap(),
        ));
        let run: serde_json::Value =
            serde_json::from_slice(&std::fs::read(out.join("measure.run.json")).unwrap()).unwrap();
        assert_eq!(run["threads"].as_u64(), Some(threads.parse().unwrap()));
    }
    assert_eq!(docs[0], docs[1]);
    let doc: serde_json::Value = serde_json::from_slice(&docs[0].0).unwrap();
    assert_eq!(doc["provenance"]["tool"], "kolmo");
    assert_eq!(doc["provenance"]["seed"], 3);
    assert_eq!(doc["provenance"]["config_sha256"].as_str().unwrap().len(), 64);
    let csv = String::from_utf8(docs[0].1.clone()).unwrap();
    assert!(csv.starts_with("# kolmo "), "{csv}");
}

#[test]
fn seed_flag_overrides_the_config_seed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "m.json", MEASURE);
    let run = |seed: &str, sub: &str| {
        let out = dir.path().join(sub);
        let o = kolmo(
            &[
                "measure",
                "--config",
                &cfg,
                "--seed",
                seed,
                "--format",
                "json",
                "--out",
                out.to_str().unwrap(),
            ],
            &[],
            dir.path(),
        );
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        assert!(!out.join("measure.csv").exists());
        serde_json::from_slice::<serde_json::Value>(&std::fs::read(out.join("measure.json")).unwrap()).unwrap()
    };
    let (a, b) = (run("11", "a"), run("12", "b"));
    assert_eq!(a["provenance"]["seed"], 11);
    assert_ne!(a["result"], b["result"]);
}

#[test]
fn out_dir_falls_back_to_environment() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "s.json", SOLVE);
    let target = dir.path().join("from-env");
    let o = kolmo(
        &["solve", "--config", &cfg],
        &[(kolmo::cli::OUT_DIR_ENV, &target)],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = std::fs::read_to_string(target.join("solve.grid.txt")).unwrap();
    assert!(text.starts_with("# kolmo "));
    let gf = GridFunction::from_text(&text).unwrap();
    // Data x is itself a solution, so the grid reproduces it.
    assert!((gf.evaluate(&[0.5, 0.25, 0.5]).unwrap() - 0.5).abs() < 1e-12);
    assert!(!dir.path().join("solve.json").exists());
}

#[test]
fn missing_config_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = kolmo(&["measure"], &[], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("--config"), "{}", stderr(&o));
}

#[test]
fn unknown_and_missing_keys_are_named() {
    let dir = tempfile::tempdir().unwrap();
    let extra = MEASURE.replace("\"seed\": 3", "\"seed\": 3, \"bogus_key\": 1");
    let cfg = write(dir.path(), "extra.json", &extra);
    let o = kolmo(&["measure", "--config", &cfg], &[], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("bogus_key"), "{}", stderr(&o));

    let missing = MEASURE.replace("\"kind\": \"K\",", "");
    let cfg = write(dir.path(), "missing.json", &missing);
    let o = kolmo(&["measure", "--config", &cfg], &[], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("kind"), "{}", stderr(&o));
}

#[test]
fn invalid_values_and_arguments_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let bad = SOLVE.replace("\"hx\": 0.125", "\"hx\": -1");
    let cfg = write(dir.path(), "bad.json", &bad);
    assert_eq!(
        kolmo(&["solve", "--config", &cfg], &[], dir.path()).status.code(),
        Some(2)
    );
    assert_eq!(kolmo(&["frobnicate"], &[], dir.path()).status.code(), Some(2));
    assert_eq!(
        kolmo(&["verify", "no-such-suite"], &[], dir.path()).status.code(),
        Some(2)
    );
    assert_eq!(kolmo(&["--help"], &[], dir.path()).status.code(), Some(0));
}

#[test]
fn verify_reports_pass_and_numerical_failure() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap().to_owned();
    let o = kolmo(
        &["verify", "group-axioms", "--samples", "200", "--out", &out],
        &[],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(String::from_utf8_lossy(&o.stdout).contains("PASS"));
    assert!(dir.path().join("verify-group-axioms.json").exists());
    // Ten samples cannot resolve a 2% volume ratio.
    let o = kolmo(
        &["verify", "ball-scaling", "--samples", "10", "--out", &out],
        &[],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
}
