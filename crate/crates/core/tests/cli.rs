use std::path::Path;
use std::process::{Command, Output};

use catsynth::css::{best_fit_css, curve_from_csv, GridSpec, Parity};
use catsynth::fock::{Cutoff, DensityOperator, FockVector};
use catsynth::pipeline::{parse_sweep_csv, RunManifest, MANIFEST_NAME};

const SMALL_GRID: &str = r#"{"alpha_sq_min": 1.0, "alpha_sq_max": 4.0, "alpha_sq_step": 0.25,
                             "db_min": 0.0, "db_max": 6.0, "db_step": 0.5}"#;

fn catsynth(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_catsynth")).args(args).output().unwrap()
}

fn config(dir: &Path, name: &str, scenario: &str, extra: &str) -> String {
    let text = format!(
        r#"{{"schema_version": 1, "scenario": {scenario},
            "landscape": {{"grid": {SMALL_GRID}}},
            "wigner": {{"range": 6.0, "points": 41}}{extra}}}"#
    );
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

fn lossy(theta: f64) -> String {
    format!(
        r#"{{"lambda": 0.12, "theta_deg": {theta}, "n_herald": 2, "cutoff": 12,
            "eta_opo": 0.9, "eta_det": 0.85, "eta_herald": 0.85}}"#
    )
}

fn manifest(dir: &Path) -> RunManifest {
    serde_json::from_str(&std::fs::read_to_string(dir.join(MANIFEST_NAME)).unwrap()).unwrap()
}

fn density(path: &Path) -> DensityOperator {
    DensityOperator::from_json(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn run_is_reproducible_from_the_command_line() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(
        tmp.path(),
        "c.json",
        &lossy(1.5),
        r#", "tomography": {"n_samples": 4000, "seed": 3, "mle": {"cutoff": 8}}"#,
    );
    let mut manifests = Vec::new();
    for out in ["a", "b"] {
        let dir = tmp.path().join(out);
        let o = catsynth(&["run", "--config", &cfg, "--out", dir.to_str().unwrap()]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        assert_eq!(String::from_utf8_lossy(&o.stdout).trim(), dir.join(MANIFEST_NAME).to_str().unwrap());
        manifests.push(manifest(&dir));
    }
    assert_eq!(manifests[0].files, manifests[1].files);
    assert_eq!(manifests[0].seeds, vec![3]);
    for f in ["density.json", "landscape.csv", "landscape.json", "wigner.csv", "samples.csv", "reconstruction.json"] {
        assert!(manifests[0].file(f).is_some(), "missing {f}");
    }

    // a different seed only changes the tomography outputs
    let dir = tmp.path().join("c");
    let o = catsynth(&["run", "--config", &cfg, "--out", dir.to_str().unwrap(), "--seed", "4"]);
    assert!(o.status.success());
    let m = manifest(&dir);
    assert_eq!(m.file("density.json"), manifests[0].file("density.json"));
    assert_ne!(m.file("samples.csv"), manifests[0].file("samples.csv"));
}

#[test]
fn untilted_plate_heralds_the_fock_state() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(tmp.path(), "c.json", r#"{"lambda": 0.2, "epsilon": 0.0, "n_herald": 2, "cutoff": 10}"#, "");
    let out = tmp.path().join("o");
    assert!(catsynth(&["run", "--config", &cfg, "--out", out.to_str().unwrap()]).status.success());
    let rho = density(&out.join("density.json"));
    let p = rho.populations();
    assert!((p[2] - 1.0).abs() < 1e-10, "{p:?}");
}

#[test]
fn config_errors_exit_with_status_2() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("o");
    let bad_key = config(tmp.path(), "k.json", r#"{"lambda": 0.1, "theta_deg": 1.0, "n_herald": 2, "cutoff": 10, "colour": 1}"#, "");
    let o = catsynth(&["run", "--config", &bad_key, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let bad_lambda = config(tmp.path(), "l.json", r#"{"lambda": 1.5, "theta_deg": 1.0, "n_herald": 2, "cutoff": 10}"#, "");
    let o = catsynth(&["run", "--config", &bad_lambda, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let o = catsynth(&["run", "--config", tmp.path().join("missing.json").to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!out.join(MANIFEST_NAME).exists());
}

#[test]
fn stage_failure_exits_3_and_removes_partial_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let text = format!(
        r#"{{"schema_version": 1, "scenario": {}, "landscape": {{"grid": {SMALL_GRID}}},
            "wigner": {{"range": 1.0, "points": 21}}}}"#,
        lossy(1.5)
    );
    let cfg = tmp.path().join("c.json");
    std::fs::write(&cfg, text).unwrap();
    let out = tmp.path().join("o");
    let o = catsynth(&["run", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).contains("wigner"));
    for f in ["density.json", "landscape.csv", MANIFEST_NAME] {
        assert!(!out.join(f).exists(), "{f} left behind");
    }
}

#[test]
fn single_theta_sweep_matches_run() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(tmp.path(), "c.json", &lossy(2.0), "");
    let run = tmp.path().join("run");
    let sweep = tmp.path().join("sweep");
    assert!(catsynth(&["run", "--config", &cfg, "--out", run.to_str().unwrap()]).status.success());
    let o = catsynth(&["sweep-theta", "--config", &cfg, "--out", sweep.to_str().unwrap(), "--thetas", "2"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let (r, s) = (manifest(&run), manifest(&sweep));
    for f in &r.files {
        let twin = s.file(&format!("theta_2/{}", f.path)).unwrap_or_else(|| panic!("sweep lacks {}", f.path));
        assert_eq!(f.sha256, twin.sha256, "{}", f.path);
    }
}

#[test]
fn sweep_covers_the_epsilon_range() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(tmp.path(), "c.json", &lossy(1.0), "");
    let out = tmp.path().join("o");
    let o = catsynth(&["sweep-theta", "--config", &cfg, "--out", out.to_str().unwrap(), "--thetas", "0.5,1.5,2.5,3.5,4.5"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let rows = parse_sweep_csv(&std::fs::read_to_string(out.join("sweep.csv")).unwrap()).unwrap();
    assert_eq!(rows.len(), 5);
    let eps: Vec<f64> = rows.iter().map(|r| r[1].unwrap()).collect();
    assert!((eps[0] - 0.017).abs() < 1e-3 && (eps[4] - 0.157).abs() < 1e-3, "{eps:?}");
    assert!(eps.windows(2).all(|w| w[1] > w[0]));
    assert!(rows.iter().all(|r| r[5].unwrap() < 0.0));
}

#[test]
fn sweep_records_failed_thetas() {
    let tmp = tempfile::tempdir().unwrap();
    let text = format!(
        r#"{{"schema_version": 1, "scenario": {}, "wigner": {{"range": 1.0, "points": 11}}}}"#,
        lossy(1.0)
    );
    let cfg = tmp.path().join("c.json");
    std::fs::write(&cfg, text).unwrap();
    let out = tmp.path().join("o");
    let o = catsynth(&["sweep-theta", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--thetas", "1,2"]);
    assert_eq!(o.status.code(), Some(3));
    let m = manifest(&out);
    assert_eq!(m.failures.len(), 2);
    assert!(m.failures.iter().all(|f| f.stage == "wigner"));
}

#[test]
fn fig1_ratio_zero_is_the_fock_fit() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("f.json");
    std::fs::write(&cfg, format!(r#"{{"schema_version": 1, "n": 2, "lambda": 0.1, "ratios": [0.0, 0.5], "grid": {SMALL_GRID}}}"#)).unwrap();
    let out = tmp.path().join("o");
    let o = catsynth(&["fig1", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let curve = curve_from_csv(&std::fs::read_to_string(out.join("fig1_n2.csv")).unwrap()).unwrap();
    assert_eq!(curve.len(), 2);
    let grid: GridSpec = serde_json::from_str(SMALL_GRID).unwrap();
    let fock = FockVector::fock(2, Cutoff::new(10).unwrap()).unwrap().to_density();
    let fit = best_fit_css(&fock, Parity::Even, &grid).unwrap().argmax;
    assert!((curve[0].fidelity_star - fit.fidelity).abs() < 1e-9);
    assert!((curve[0].w_vacuum).abs() < 1e-12 && (curve[0].w_nphoton - 1.0).abs() < 1e-12);
}

#[test]
fn tomo_and_wigner_subcommands_read_run_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(
        tmp.path(),
        "c.json",
        r#"{"lambda": 0.1, "epsilon": 0.0, "n_herald": 1, "cutoff": 10}"#,
        r#", "tomography": {"n_samples": 20000, "seed": 9, "mle": {"cutoff": 6}}"#,
    );
    let run = tmp.path().join("run");
    assert!(catsynth(&["run", "--config", &cfg, "--out", run.to_str().unwrap()]).status.success());

    let tcfg = tmp.path().join("t.json");
    std::fs::write(&tcfg, r#"{"schema_version": 1, "mle": {"cutoff": 6}}"#).unwrap();
    let tomo = tmp.path().join("tomo");
    let samples = run.join("samples.csv");
    let o = catsynth(&["tomo", "--config", tcfg.to_str().unwrap(), "--samples", samples.to_str().unwrap(), "--out", tomo.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let recon: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(tomo.join("reconstruction.json")).unwrap()).unwrap();
    let rho = DensityOperator::from_json(&recon["density"].to_string()).unwrap();
    assert!(recon["converged"].as_bool().unwrap());
    let p1 = rho.populations()[1];
    assert!(p1 > 0.97, "{p1}");

    let wig = tmp.path().join("wig");
    let dens = run.join("density.json");
    let o = catsynth(&["wigner", "--density", dens.to_str().unwrap(), "--out", wig.to_str().unwrap(), "--points", "41"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(
        std::fs::read(wig.join("wigner.csv")).unwrap(),
        std::fs::read(run.join("wigner.csv")).unwrap()
    );
}
