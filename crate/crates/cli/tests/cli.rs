use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bundled(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(format!("{name}.spec"))
}

fn quadeff(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_quadeff")).args(args).output().expect("spawn quadeff")
}

fn run(sub: &str, spec: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec![sub, spec.to_str().unwrap(), "--out", out.to_str().unwrap(), "--quiet"];
    args.extend_from_slice(extra);
    quadeff(&args)
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn header(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap().lines().next().unwrap().to_string()
}

fn rows(path: &Path) -> Vec<Vec<String>> {
    std::fs::read_to_string(path).unwrap().lines().skip(1).map(|l| l.split(',').map(str::to_string).collect()).collect()
}

fn write_spec(dir: &Path, body: &str) -> PathBuf {
    let path = dir.join("test.spec");
    std::fs::write(&path, body).unwrap();
    path
}

#[test]
fn run_writes_six_csvs_with_frozen_headers() {
    let dir = tempfile::tempdir().unwrap();
    let o = run("run", &bundled("degradation"), dir.path(), &[]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let golden = [
        ("estimates.csv", "t,eta1,eta2,eta3,eta4,irls_iters,rejected,gap,converged"),
        ("truth.csv", "t,eta1,eta2,eta3,eta4"),
        ("ekf.csv", "t,eta1,eta2,eta3,eta4"),
        ("weights.csv", "t,segment,weight,zscore,rejected"),
        ("kkt_trace.csv", "window,irls_iter,newton_iter,r_dual_norm,r_cent_norm,gap,alpha,beta"),
        ("metrics.csv", "method,motor,rmse,std,max_spike"),
    ];
    let mut names: Vec<String> =
        std::fs::read_dir(dir.path()).unwrap().map(|e| e.unwrap().file_name().to_string_lossy().into_owned()).collect();
    names.sort();
    let mut expected: Vec<String> = golden.iter().map(|(n, _)| n.to_string()).collect();
    expected.sort();
    assert_eq!(names, expected);
    for (name, head) in golden {
        assert_eq!(header(&dir.path().join(name)), head, "{name}");
    }
    let metrics = rows(&dir.path().join("metrics.csv"));
    assert_eq!(metrics.len(), 8);
    assert_eq!(metrics[0][0], "irls");
    assert_eq!(metrics[4][0], "ekf");
    // 17 significant digits
    let t = &rows(&dir.path().join("estimates.csv"))[0][0];
    assert_eq!(t.split('e').next().unwrap().replace(['-', '.'], "").len(), 17, "{t}");
}

#[test]
fn compare_table_and_repeatability() {
    let dir = tempfile::tempdir().unwrap();
    let spec = bundled("fault");
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out in [&a, &b] {
        let o = run("compare", &spec, out, &[]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    }
    let path = a.join("metrics_compare.csv");
    assert_eq!(header(&path), "motor,irls_rmse,ekf_rmse,irls_std,ekf_std,irls_max_spike,ekf_max_spike");
    let table = rows(&path);
    assert_eq!(table.len(), 4);
    assert!(table.iter().all(|r| r.len() == 7));
    let ekf_cols =
        |p: &Path| rows(p).into_iter().map(|r| (r[2].clone(), r[4].clone(), r[6].clone())).collect::<Vec<_>>();
    assert_eq!(ekf_cols(&path), ekf_cols(&b.join("metrics_compare.csv")));
    assert_eq!(std::fs::read(a.join("ekf.csv")).unwrap(), std::fs::read(b.join("ekf.csv")).unwrap());
}

#[test]
fn degradation_methods_agree_after_calibration() {
    let dir = tempfile::tempdir().unwrap();
    let o = run("compare", &bundled("degradation"), dir.path(), &[]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let table = rows(&dir.path().join("metrics_compare.csv"));
    let mean = |col: usize| table.iter().map(|r| r[col].parse::<f64>().unwrap()).sum::<f64>() / 4.0;
    let (irls, ekf) = (mean(1), mean(2));
    assert!((irls - ekf).abs() / irls <= 0.10, "irls {irls} ekf {ekf}");
}

#[test]
fn convergence_dump() {
    let dir = tempfile::tempdir().unwrap();
    let o = run("convergence", &bundled("convergence"), dir.path(), &[]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let conv = dir.path().join("convergence.csv");
    assert_eq!(header(&conv), "irls_iter,newton_iter,eta1,eta2,eta3,eta4,r_dual_norm,r_cent_norm,gap");
    let table = rows(&conv);
    let eta = |r: &Vec<String>| -> Vec<f64> { r[2..6].iter().map(|v| v.parse().unwrap()).collect() };
    assert_eq!(eta(&table[0]), vec![0.5; 4]);
    let last = eta(table.last().unwrap());
    for (e, t) in last.iter().zip([0.9, 0.8, 0.95, 1.0]) {
        assert!((e - t).abs() < 1e-3, "{last:?}");
    }

    let kkt = rows(&dir.path().join("kkt_trace.csv"));
    assert!(kkt.len() <= 50 * 3);
    for round in ["1", "2", "3"] {
        let gaps: Vec<f64> = kkt.iter().filter(|r| r[1] == round).map(|r| r[5].parse().unwrap()).collect();
        assert!(!gaps.is_empty());
        assert!(gaps.windows(2).all(|w| w[1] < w[0]), "round {round}: {gaps:?}");
    }
}

#[test]
fn malformed_spec_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    for body in [
        "seed = 1\nduration = ",
        "seed = 1\ndurration = 5.0",
        "seed = 1\n[[faults]]\nmotor = 7\nt_start = 1.0\nt_end = 2.0\neta = 0.5",
    ] {
        let spec = write_spec(dir.path(), body);
        let o = run("run", &spec, &dir.path().join("out"), &[]);
        assert_eq!(o.status.code(), Some(2), "{body}");
        assert!(stderr(&o).contains("test.spec"), "{}", stderr(&o));
    }
    let o = run("run", &dir.path().join("missing.spec"), &dir.path().join("out"), &[]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn seed_is_required() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write_spec(dir.path(), "duration = 1.5\n");
    let o = run("run", &spec, &dir.path().join("out"), &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("seed"));
    let o = run("run", &spec, &dir.path().join("out"), &["--seed", "3"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
}

#[test]
fn unstable_gains_are_a_numerical_abort() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write_spec(dir.path(), "seed = 1\nduration = 3.0\n[gains]\nk_omega = [1e4, 1e4, 1e4]\n");
    let o = run("run", &spec, &dir.path().join("out"), &[]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(stderr(&o).contains("step"), "{}", stderr(&o));
}

#[test]
fn unwritable_output_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    std::fs::write(&blocker, "").unwrap();
    let spec = write_spec(dir.path(), "seed = 1\nduration = 1.5\n");
    let o = run("run", &spec, &blocker.join("out"), &[]);
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));
}

#[test]
fn usage_errors() {
    assert_eq!(quadeff(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(quadeff(&["run", "x.spec"]).status.code(), Some(2));
}
