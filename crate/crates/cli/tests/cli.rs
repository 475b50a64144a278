//! End-to-end runs of the `shadowflow` binary.

use std::path::Path;
use std::process::{Command, Output};

fn shadowflow(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_shadowflow"))
        .args(args)
        .env_remove("SHADOWFLOW_THREADS")
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

fn read(p: impl AsRef<Path>) -> String {
    std::fs::read_to_string(p).unwrap()
}

#[test]
fn oracle_check_from_config_and_rerun() {
    let dir = tempfile::tempdir().unwrap();
    let out_a = dir.path().join("a");
    let cfg = write(
        dir.path(),
        "oracle.toml",
        "experiment = \"oracle-check\"\nscaling_c = [2.0]\nlengths = [3]\n",
    );
    ok(&shadowflow(&[
        "oracle-check",
        "--config",
        &cfg,
        "--out",
        out_a.to_str().unwrap(),
    ]));
    let csv = read(out_a.join("oracle-check.csv"));
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "C,N,delta,epsilon,closed_form,relative_error");
    assert_eq!(lines.len(), 2);
    let cells: Vec<f64> = lines[1].split(',').map(|c| c.parse().unwrap()).collect();
    assert_eq!((cells[0], cells[1]), (2.0, 3.0));
    assert!(cells[5] < 1e-10, "{}", lines[1]);

    let out_b = dir.path().join("b");
    let manifest = out_a.join("oracle-check.manifest.toml");
    ok(&shadowflow(&[
        "rerun",
        manifest.to_str().unwrap(),
        "--out",
        out_b.to_str().unwrap(),
    ]));
    assert_eq!(csv, read(out_b.join("oracle-check.csv")));
    let m = read(out_b.join("oracle-check.manifest.toml"));
    assert!(m.contains("rows = 1"), "{m}");
}

#[test]
fn overrides_reach_the_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    let cfg = write(
        dir.path(),
        "delta.toml",
        "experiment = \"delta\"\ntarget = \"cross\"\nleapfrog_steps = 5\nfit_steps = 200\ndraws = 3\n",
    );
    ok(&shadowflow(&[
        "delta",
        "--config",
        &cfg,
        "--seed",
        "9",
        "--precision-bits",
        "192",
        "--out",
        out.to_str().unwrap(),
    ]));
    let m = read(out.join("delta.manifest.toml"));
    assert!(m.contains("seed = 9"), "{m}");
    assert!(m.contains("precision_bits = 192"), "{m}");
    assert_eq!(read(out.join("delta.csv")).lines().count(), 4);
}

#[test]
fn unknown_config_key_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "bad.toml", "experiment = \"delta\"\nseedz = 3\n");
    let out = shadowflow(&["delta", "--config", &cfg, "--out", dir.path().to_str().unwrap()]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("seedz"), "{err}");
    assert!(!dir.path().join("delta.csv").exists());
}

#[test]
fn config_must_match_subcommand() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "e.toml", "experiment = \"elbo-curve\"\n");
    let out = shadowflow(&["delta", "--config", &cfg]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("elbo-curve"));
}

#[test]
fn regression_target_reads_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let header = "crim,zn,indus,chas,nox,rm,age,dis,rad,tax,ptratio,b,lstat,medv";
    let mut csv = String::from(header);
    csv.push('\n');
    for i in 0..30 {
        let row: Vec<String> = (0..14)
            .map(|j| format!("{}", ((i * 7 + j * 3) % 11) as f64 + 0.1 * j as f64))
            .collect();
        csv.push_str(&row.join(","));
        csv.push('\n');
    }
    let data = write(dir.path(), "housing.csv", &csv);
    let out = dir.path().join("o");
    let cfg = write(
        dir.path(),
        "lin.toml",
        &format!(
            "experiment = \"inversion-check\"\ntarget = \"linreg\"\ndataset_path = {data:?}\nfit_steps = 100\nleapfrog_steps = 3\nseeds = 2\nlengths = [4]\nprecision_bits = 256\n"
        ),
    );
    ok(&shadowflow(&[
        "inversion-check",
        "--config",
        &cfg,
        "--out",
        out.to_str().unwrap(),
    ]));
    let table = read(out.join("inversion-check.csv"));
    assert_eq!(table.lines().count(), 3);

    let missing = write(
        dir.path(),
        "nodata.toml",
        "experiment = \"delta\"\ntarget = \"logreg\"\n",
    );
    let res = shadowflow(&["delta", "--config", &missing]);
    assert!(!res.status.success());
    assert!(String::from_utf8_lossy(&res.stderr).contains("dataset_path"));
}

#[test]
fn plot_renders_orbit_error_csv() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    let cfg = write(
        dir.path(),
        "orbit.toml",
        "experiment = \"orbit-error\"\nleapfrog_steps = 5\nfit_steps = 200\nseeds = 3\nlengths = [1, 2, 3, 4, 5]\n",
    );
    ok(&shadowflow(&[
        "orbit-error",
        "--config",
        &cfg,
        "--out",
        out.to_str().unwrap(),
    ]));
    let svg = dir.path().join("orbit.svg");
    ok(&shadowflow(&[
        "plot",
        out.join("orbit-error.csv").to_str().unwrap(),
        "--out",
        svg.to_str().unwrap(),
        "--log-y",
        "--title",
        "orbit error",
    ]));
    let text = read(&svg);
    assert!(text.starts_with("<svg"));
    assert_eq!(text.matches("<polyline").count(), 2);
}

#[test]
fn thread_cap_must_be_a_count() {
    let out = Command::new(env!("CARGO_BIN_EXE_shadowflow"))
        .args(["oracle-check", "--out", "/nonexistent-never-written"])
        .env("SHADOWFLOW_THREADS", "many")
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("SHADOWFLOW_THREADS"));
}
