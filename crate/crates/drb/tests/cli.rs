use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use drb::io::{self, read_trace_csv, PotentialsFile};
use drb_core::DiscreteMeasure;

fn drb(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_drb"))
        .args(args)
        .env_remove("DRB_THREADS")
        .output()
        .expect("binary runs")
}

struct Inputs {
    dir: tempfile::TempDir,
}

impl Inputs {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let a = DiscreteMeasure::new(&[vec![-0.6], vec![-0.2]], vec![0.5, 0.5]).unwrap();
        let b =
            DiscreteMeasure::new(&[vec![0.3], vec![0.7], vec![0.1]], vec![0.2, 0.5, 0.3]).unwrap();
        io::write_measure(&dir.path().join("a.json"), &a).unwrap();
        io::write_measure(&dir.path().join("b.csv"), &b).unwrap();
        io::write_measure(
            &dir.path().join("ref.json"),
            &drb::fixtures::uniform_grid_1d(41, 1.0).unwrap(),
        )
        .unwrap();
        Self { dir }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn s(&self, name: &str) -> String {
        self.path(name).to_string_lossy().into_owned()
    }
}

fn read(p: &Path) -> String {
    std::fs::read_to_string(p).unwrap()
}

#[test]
fn fixed_support_solve_writes_all_outputs() {
    let inp = Inputs::new();
    let out = inp.s("run");
    let o = drb(&[
        "solve",
        "--lambda",
        "0.5",
        "--preset",
        "debiased",
        "--marginals",
        &inp.s("a.json"),
        &inp.s("b.csv"),
        "--reference",
        &inp.s("ref.json"),
        "--tol",
        "1e-8",
        "--out",
        &out,
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let run = inp.path("run");
    for f in [
        "barycenter.json",
        "trace.csv",
        "certificate.json",
        "psi.json",
        "config.json",
    ] {
        assert!(run.join(f).exists(), "{f} missing");
    }
    let mu = io::read_measure(&run.join("barycenter.json")).unwrap();
    assert_eq!(mu.len(), 41);
    let trace = read_trace_csv(&run.join("trace.csv")).unwrap();
    let values: Vec<f64> = trace.iter().map(|r| r.dual_value.unwrap()).collect();
    assert!(values.windows(2).all(|w| w[1] >= w[0] - 1e-12));
    let cert: serde_json::Value = io::read_json(&run.join("certificate.json")).unwrap();
    assert!(cert["gap_upper_bound"].as_f64().unwrap() <= 1e-8);
    let config: serde_json::Value = io::read_json(&run.join("config.json")).unwrap();
    assert_eq!(config["tau"].as_f64(), Some(0.25));
}

#[test]
fn config_json_reproduces_the_run_bit_for_bit() {
    let inp = Inputs::new();
    let first = drb(&[
        "solve",
        "--lambda",
        "1",
        "--tau",
        "0.3",
        "--weights",
        "0.3",
        "0.7",
        "--marginals",
        &inp.s("a.json"),
        &inp.s("b.csv"),
        "--reference",
        &inp.s("ref.json"),
        "--max-iters",
        "40",
        "--wall-time",
        "false",
        "--out",
        &inp.s("one"),
    ]);
    assert!(first.status.code().is_some());
    let cfg = inp.s("one/config.json");
    let second = drb(&["solve", "--config", &cfg, "--out", &inp.s("two")]);
    assert_eq!(first.status.code(), second.status.code());
    for f in [
        "trace.csv",
        "psi.json",
        "barycenter.json",
        "certificate.json",
    ] {
        assert_eq!(
            read(&inp.path("one").join(f)),
            read(&inp.path("two").join(f)),
            "{f} differs"
        );
    }
}

#[test]
fn flags_override_the_config_file() {
    let inp = Inputs::new();
    let o = drb(&[
        "solve",
        "--lambda",
        "1",
        "--tau",
        "0.5",
        "--marginals",
        &inp.s("a.json"),
        &inp.s("b.csv"),
        "--reference",
        &inp.s("ref.json"),
        "--out",
        &inp.s("one"),
    ]);
    assert!(o.status.success());
    let o = drb(&[
        "solve",
        "--config",
        &inp.s("one/config.json"),
        "--tau",
        "0.25",
        "--out",
        &inp.s("two"),
    ]);
    assert!(o.status.success());
    let c: serde_json::Value = io::read_json(&inp.path("two/config.json")).unwrap();
    assert_eq!(c["tau"].as_f64(), Some(0.25));
    assert_eq!(c["lambda"].as_f64(), Some(1.0));
}

#[test]
fn exit_codes_distinguish_input_errors_from_exhausted_budgets() {
    let inp = Inputs::new();
    let bad = drb(&[
        "solve",
        "--lambda",
        "1",
        "--tau",
        "1",
        "--marginals",
        &inp.s("missing.json"),
        "--reference",
        &inp.s("ref.json"),
    ]);
    assert_eq!(bad.status.code(), Some(1));
    let no_tau = drb(&[
        "solve",
        "--lambda",
        "1",
        "--marginals",
        &inp.s("a.json"),
        "--reference",
        &inp.s("ref.json"),
    ]);
    assert_eq!(no_tau.status.code(), Some(1));
    let short = drb(&[
        "solve",
        "--lambda",
        "0.1",
        "--tau",
        "0.05",
        "--marginals",
        &inp.s("a.json"),
        &inp.s("b.csv"),
        "--reference",
        &inp.s("ref.json"),
        "--max-iters",
        "2",
        "--tol",
        "1e-12",
        "--out",
        &inp.s("short"),
    ]);
    assert_eq!(short.status.code(), Some(2));
    assert!(inp.path("short/trace.csv").exists());
    let exhausted = drb(&[
        "solve",
        "--mode",
        "free",
        "--lambda",
        "1",
        "--tau",
        "1",
        "--marginals",
        &inp.s("a.json"),
        &inp.s("b.csv"),
        "--radius",
        "1",
        "--dim",
        "1",
        "--eps",
        "0.01",
        "--max-iters",
        "2",
        "--out",
        &inp.s("free"),
    ]);
    assert_eq!(
        exhausted.status.code(),
        Some(2),
        "{}",
        String::from_utf8_lossy(&exhausted.stderr)
    );
}

#[test]
fn free_support_solve_with_a_practical_budget() {
    let inp = Inputs::new();
    let o = drb(&[
        "solve",
        "--mode",
        "free",
        "--lambda",
        "1",
        "--tau",
        "1",
        "--marginals",
        &inp.s("a.json"),
        &inp.s("b.csv"),
        "--radius",
        "1",
        "--dim",
        "1",
        "--max-iters",
        "3",
        "--n-samples",
        "200",
        "--sigma",
        "0.05",
        "--step",
        "1e-3",
        "--ula-iters",
        "300",
        "--allow-uncertified",
        "--final-samples",
        "500",
        "--eval-grid",
        "101",
        "--threads",
        "2",
        "--out",
        &inp.s("free"),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let free = inp.path("free");
    let samples = io::read_samples_csv(&free.join("samples.csv")).unwrap();
    assert_eq!(samples.len(), 500);
    assert!(samples.iter().all(|x| x[0].abs() <= 1.0));
    let side: serde_json::Value = io::read_json(&free.join("samples.json")).unwrap();
    assert_eq!(side["certified"], serde_json::Value::Bool(false));
    assert_eq!(side["sigma"].as_f64(), Some(0.05));
    let header = read(&free.join("trace.csv"));
    assert!(header.starts_with(
        "t,dual_value,improvement_bound,gap_upper_bound,max_osc,wall_ms,epsilon_certified,n_samples,sigma"
    ));
    let trace = read_trace_csv(&free.join("trace.csv")).unwrap();
    assert!(trace.iter().all(|r| r.dual_value.is_some()));
}

#[test]
fn certify_matches_the_solver_certificate() {
    let inp = Inputs::new();
    let common = [
        "--lambda",
        "0.5",
        "--tau",
        "0.5",
        "--marginals",
        &inp.s("a.json"),
        &inp.s("b.csv"),
        "--reference",
        &inp.s("ref.json"),
    ];
    let mut solve = vec!["solve", "--out"];
    let run = inp.s("run");
    solve.push(&run);
    solve.extend(common);
    assert!(drb(&solve).status.success());
    let psi = inp.s("run/psi.json");
    let cert_path = inp.s("cert.json");
    let mut certify = vec!["certify", "--psi", &psi, "--out", &cert_path];
    certify.extend(common);
    let o = drb(&certify);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(
        read(&inp.path("cert.json")),
        read(&inp.path("run/certificate.json"))
    );
    let potentials: PotentialsFile = io::read_json(&inp.path("run/psi.json")).unwrap();
    assert_eq!(potentials.potentials.len(), 2);
}

#[test]
fn verify_oracle_reports_compliance() {
    let inp = Inputs::new();
    let report = inp.s("oracle.json");
    let o = drb(&[
        "verify-oracle",
        "--lambda",
        "1",
        "--tau",
        "0.5",
        "--marginals",
        &inp.s("a.json"),
        &inp.s("b.csv"),
        "--reference",
        &inp.s("ref.json"),
        "--reps",
        "20",
        "--n-samples",
        "10000",
        "--out",
        &report,
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: drb::cli::OracleVerification = io::read_json(&inp.path("oracle.json")).unwrap();
    assert_eq!(v.reps, 20);
    assert!(v.compliant());
}

#[test]
fn divergence_demo_writes_both_traces() {
    let inp = Inputs::new();
    let o = drb(&["divergence-demo", "--out", &inp.s("div")]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let damped = read_trace_csv(&inp.path("div/damped_trace.csv")).unwrap();
    let undamped = read_trace_csv(&inp.path("div/undamped_trace.csv")).unwrap();
    assert!((2..=201).contains(&damped.len()));
    let drops = |t: &[io::TraceRow]| {
        t.windows(2)
            .map(|w| w[0].dual_value.unwrap() - w[1].dual_value.unwrap())
            .fold(0.0, f64::max)
    };
    assert!(drops(&undamped) > 1e-6);
    assert!(drops(&damped) <= 1e-12);
}
