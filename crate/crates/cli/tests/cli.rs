use std::path::Path;
use std::process::{Command, Output};

use zenosim::experiment::ExperimentSpec;

fn zenosim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_zenosim")).args(args).output().expect("binary runs")
}

fn write_spec(dir: &Path, body: &str) -> String {
    let p = dir.join("spec.toml");
    std::fs::write(&p, body).unwrap();
    p.display().to_string()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn unknown_key_is_spec_error_with_suggestion() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write_spec(dir.path(), "[device]\nkapa_mhz = 0.2\n");
    let o = zenosim(&["bound-table", "--spec", &spec, "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let e = stderr(&o);
    assert!(e.contains("line 2") && e.contains("did you mean `kappa_mhz`"), "{e}");
    assert!(!dir.path().join("bound-table.csv").exists());
}

#[test]
fn invariant_violation_names_key() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write_spec(dir.path(), "[device]\nkappa_mhz = -1\n");
    let o = zenosim(&["bound-table", "--spec", &spec, "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let e = stderr(&o);
    assert!(e.contains("device.kappa_mhz") && e.contains("line 2"), "{e}");
}

#[test]
fn unknown_subcommand_rejected() {
    let o = zenosim(&["fig5"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn fit_failure_is_numerical_error() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write_spec(
        dir.path(),
        "[sim]\nn_fock = 6\n[protocol.calibrate]\neps_mhz = [0.0, 2.5]\nsymmetric = [true]\n[protocol.calibrate.ramsey]\nresidual_limit = 1e-9\n",
    );
    let o = zenosim(&["calibrate", "--spec", &spec, "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
}

#[test]
fn outputs_are_deterministic_and_carry_the_hash() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write_spec(dir.path(), "[protocol.bounds]\nratios = [0.01, 0.05]\n");
    let mut csvs = Vec::new();
    for k in 0..2 {
        let out = dir.path().join(format!("run{k}"));
        let o = zenosim(&["bound-table", "--spec", &spec, "--out", out.to_str().unwrap(), "--seed", "5"]);
        assert!(o.status.success(), "{}", stderr(&o));
        csvs.push(std::fs::read(out.join("bound-table.csv")).unwrap());
    }
    assert_eq!(csvs[0], csvs[1]);

    let out = dir.path().join("run0");
    let meta: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("bound-table.json")).unwrap()).unwrap();
    let resolved = ExperimentSpec::parse_str(&std::fs::read_to_string(out.join("bound-table.spec.toml")).unwrap()).unwrap();
    assert_eq!(resolved.sim.seed, 5);
    let hash = resolved.hash();
    assert_eq!(meta["spec_hash"], hash.as_str());
    assert_eq!(meta["seed"], 5);
    assert_eq!(meta["subcommand"], "bound-table");

    let csv = String::from_utf8(csvs[0].clone()).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("spec_hash,ratio,analytic,loosened,lower_estimate"));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 2);
    for r in rows {
        let cells: Vec<f64> = r.split(',').skip(1).map(|c| c.parse().unwrap()).collect();
        assert!(r.starts_with(&hash));
        assert!(cells[3] <= cells[1] && cells[1] <= cells[2], "{r}");
    }
    assert!(!csv.contains('\r'));
}

#[test]
fn seed_changes_the_hash() {
    let dir = tempfile::tempdir().unwrap();
    let mut hashes = Vec::new();
    for seed in ["1", "2"] {
        let out = dir.path().join(seed);
        let o = zenosim(&[
            "tomo-roundtrip", "--out", out.to_str().unwrap(), "--seed", seed, "--jobs", "1",
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
        let meta: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(out.join("tomo-roundtrip.json")).unwrap()).unwrap();
        hashes.push(meta["spec_hash"].as_str().unwrap().to_string());
    }
    assert_ne!(hashes[0], hashes[1]);
}

#[test]
fn block_sweep_schema_and_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write_spec(dir.path(), "[protocol.block]\nrabi_mhz = [1.0]\neps_mhz = [1.0, 2.0]\n");
    let o = zenosim(&["block-sweep", "--spec", &spec, "--out", dir.path().to_str().unwrap(), "--fock", "8", "--dt", "0.5"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = std::fs::read_to_string(dir.path().join("block-sweep.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("spec_hash,rabi_mhz,eps_mhz,model,p_gg"));
    let models: Vec<&str> = lines.map(|l| l.split(',').nth(3).unwrap()).collect();
    assert_eq!(models, ["full-cavity", "full-cavity", "ideal-markovian", "ideal-markovian"]);
    let resolved = ExperimentSpec::parse_str(&std::fs::read_to_string(dir.path().join("block-sweep.spec.toml")).unwrap()).unwrap();
    assert_eq!(resolved.sim.n_fock, 8);
    assert_eq!(resolved.sim.dt_ns, Some(0.5));
}
