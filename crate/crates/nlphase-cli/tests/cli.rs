use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn nlphase(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nlphase")).args(args).arg("--out").arg(out).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn audit_passes_for_builtin_kernels() {
    let dir = tempfile::tempdir().unwrap();
    for family in ["pLaplacian", "meanCurvature"] {
        let o = nlphase(&["audit", "--family", family, "--n", "2", "--samples", "2000"], dir.path());
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        assert!(stdout(&o).contains("11/11"), "{}", stdout(&o));
    }
    let kv = fs::read_to_string(dir.path().join("audit.kv")).unwrap();
    assert!(!kv.is_empty());
    assert!(dir.path().join("audit.txt").exists());
}

#[test]
fn short_radius_list_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = nlphase(&["scaling", "--R-list", "4,8,16"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("fit requires >= 4 radii"), "{}", stderr(&o));
}

#[test]
fn checks_are_reproducible_for_a_seed() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let args = ["checks", "--seed", "3", "--samples", "200", "--set", "experiment.pairs=20"];
    let oa = nlphase(&args, a.path());
    let ob = nlphase(&args, b.path());
    assert_eq!(oa.status.code(), Some(0), "{}{}", stdout(&oa), stderr(&oa));
    assert_eq!(stdout(&oa), stdout(&ob));
    for name in ["checks.txt", "tail_estimate.csv"] {
        assert_eq!(fs::read(a.path().join(name)).unwrap(), fs::read(b.path().join(name)).unwrap(), "{name}");
    }
}

#[test]
fn config_errors_name_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    fs::write(&cfg, "[kernel]\nn = 1\nq = 3\n").unwrap();
    let o = nlphase(&["energy", "--config", cfg.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("config line 3: unknown field 'q' in [kernel]"), "{}", stderr(&o));

    fs::write(&cfg, "[kernel]\n\ns = half\n").unwrap();
    let o = nlphase(&["energy", "--config", cfg.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("config line 3"), "{}", stderr(&o));
}

#[test]
fn flags_override_config_values() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    fs::write(&cfg, "[kernel]\nn = 1\ns = 0.25\n[domain]\nR = 2\nh = 0.125\n").unwrap();
    let from_cfg = nlphase(&["energy", "--config", cfg.to_str().unwrap()], dir.path());
    let first = fs::read_to_string(dir.path().join("energy.csv")).unwrap();
    let flagged = nlphase(&["energy", "--config", cfg.to_str().unwrap(), "--s", "0.75"], dir.path());
    let second = fs::read_to_string(dir.path().join("energy.csv")).unwrap();
    let direct = nlphase(&["energy", "--n", "1", "--s", "0.75", "--R", "2", "--h", "0.125"], dir.path());
    let third = fs::read_to_string(dir.path().join("energy.csv")).unwrap();
    assert!(stdout(&from_cfg).contains("s=0.25"), "{}", stdout(&from_cfg));
    assert!(stdout(&flagged).contains("s=0.75"), "{}", stdout(&flagged));
    assert_ne!(first, second);
    assert_eq!(second, third);
    assert_eq!(stdout(&flagged), stdout(&direct));
    // a named flag wins over --set for the same field
    let both =
        nlphase(&["energy", "--config", cfg.to_str().unwrap(), "--set", "kernel.s=0.5", "--s", "0.75"], dir.path());
    assert_eq!(stdout(&both), stdout(&direct));
}

#[test]
fn minimizer_output_can_be_read_back() {
    let dir = tempfile::tempdir().unwrap();
    let o = nlphase(&["minimize", "--n", "1", "--R", "2", "--h", "0.125"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let grid = dir.path().join("minimizer.grid");
    let trace = fs::read_to_string(dir.path().join("trace.csv")).unwrap();
    assert!(trace.starts_with("iter,energy,grad_norm,step\n"));
    let energy = fs::read_to_string(dir.path().join("energy.csv")).unwrap();
    let row: Vec<&str> = energy.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(row.len(), 6);
    // energy of the stored minimizer matches the reported one
    let again_dir = tempfile::tempdir().unwrap();
    let o = nlphase(&["energy", "--n", "1", "--input", grid.to_str().unwrap()], again_dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let again = fs::read_to_string(again_dir.path().join("energy.csv")).unwrap();
    let total = |s: &str| s.lines().nth(1).unwrap().rsplit(',').next().unwrap().parse::<f64>().unwrap();
    assert!((total(&again) - total(&energy)).abs() <= 1e-10 * total(&energy));
}

#[test]
fn bad_values_exit_with_usage_status() {
    let dir = tempfile::tempdir().unwrap();
    for args in [
        &["energy", "--s", "1.5"][..],
        &["energy", "--potential", "quartic"][..],
        &["audit", "--set", "kernel.q=1"][..],
        &["energy", "--threads", "0"][..],
    ] {
        let o = nlphase(args, dir.path());
        assert_eq!(o.status.code(), Some(2), "{args:?}: {}", stderr(&o));
    }
}
