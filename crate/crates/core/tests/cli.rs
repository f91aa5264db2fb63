use std::path::Path;
use std::process::Command;

use nslab::harness::{default_spec, DataSpec, Experiment, ExperimentSpec};

fn run(args: &[&str]) -> (i32, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_nslab")).args(args).output().unwrap();
    (out.status.code().unwrap(), String::from_utf8_lossy(&out.stdout).into_owned())
}

fn write_spec(dir: &Path, name: &str, spec: &ExperimentSpec) -> String {
    let path = dir.join(name);
    std::fs::write(&path, serde_json::to_string_pretty(spec).unwrap()).unwrap();
    path.display().to_string()
}

fn with_amplitude(amplitude: f64) -> ExperimentSpec {
    let mut spec = default_spec("picard", 0).unwrap();
    if let Experiment::Picard { scheme } = &mut spec.experiment {
        scheme.data = DataSpec::LowMode { amplitude };
    }
    spec
}

#[test]
fn default_picard_passes_and_writes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let (code, stdout) = run(&["picard", "--out", out.to_str().unwrap()]);
    assert_eq!(code, 0, "{stdout}");
    for f in ["manifest.json", "ledger.csv", "u_final.bin", "summary.txt"] {
        assert!(out.join(f).exists(), "{f} missing");
    }
    let csv = std::fs::read_to_string(out.join("ledger.csv")).unwrap();
    assert!(csv.starts_with("m,sup_norm,mild,K,L,M,cross,d,law\n"));
}

#[test]
fn large_data_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write_spec(dir.path(), "big.json", &with_amplitude(100.0));
    let (code, stdout) = run(&["picard", "--spec", &spec, "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(code, 2, "{stdout}");
    assert!(stdout.contains("REFUSED"));
}

#[test]
fn failed_assertion_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let mut spec = default_spec("verify-strong", 0).unwrap();
    if let Experiment::VerifyStrong { threshold, .. } = &mut spec.experiment {
        *threshold = Some(1e-300);
    }
    let path = write_spec(dir.path(), "strict.json", &spec);
    let (code, stdout) = run(&["verify-strong", "--spec", &path, "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(code, 1, "{stdout}");
    assert!(stdout.contains("FAIL strong residual"));
}

#[test]
fn invalid_manifests_exit_three() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    let picard = write_spec(dir.path(), "picard.json", &with_amplitude(1.0));
    assert_eq!(run(&["brezis", "--spec", &picard, "--out", out.to_str().unwrap()]).0, 3);

    let garbled = dir.path().join("garbled.json");
    std::fs::write(&garbled, "{\"kind\": \"picard\", \"scheme\": 4}").unwrap();
    assert_eq!(run(&["picard", "--spec", garbled.to_str().unwrap(), "--out", out.to_str().unwrap()]).0, 3);

    let mut bad_grid = with_amplitude(1.0);
    if let Experiment::Picard { scheme } = &mut bad_grid.experiment {
        scheme.grid.n = 0;
    }
    let path = write_spec(dir.path(), "grid.json", &bad_grid);
    let (code, stdout) = run(&["picard", "--spec", &path, "--out", out.to_str().unwrap()]);
    assert_eq!(code, 3, "{stdout}");
    assert!(stdout.contains("INVALID"));
}

#[test]
fn seed_flag_overrides_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    let (code, _) = run(&["norm", "--seed", "9", "--out", out.to_str().unwrap()]);
    assert_eq!(code, 0);
    let written: ExperimentSpec = serde_json::from_str(&std::fs::read_to_string(out.join("spec.json")).unwrap()).unwrap();
    assert_eq!(written.seed, 9);
}
