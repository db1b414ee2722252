//! Exit-code contract, output schemas and golden artifacts of the binary.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};
use tempfile::TempDir;

fn root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn problem(name: &str) -> PathBuf {
    root().join("problems").join(name)
}

fn kktsynth(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kktsynth"))
        .args(args)
        .output()
        .unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("terminated by a signal")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn json_stdout(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout)
        .unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&out.stdout)))
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Replaces every leaf with its type name; arrays collapse to the shape of
/// their elements, which must agree.
fn shape(v: &Value) -> Value {
    match v {
        Value::Null => json!("null"),
        Value::Bool(_) => json!("bool"),
        Value::Number(_) => json!("number"),
        Value::String(_) => json!("string"),
        Value::Array(items) => {
            let shapes: Vec<Value> = items.iter().map(shape).collect();
            assert!(shapes.windows(2).all(|w| w[0] == w[1]), "mixed array {v}");
            Value::Array(shapes.into_iter().take(1).collect())
        }
        Value::Object(m) => Value::Object(m.iter().map(|(k, x)| (k.clone(), shape(x))).collect()),
    }
}

fn keys(v: &Value) -> Vec<String> {
    let mut out = Vec::new();
    fn walk(v: &Value, prefix: &str, out: &mut Vec<String>) {
        if let Value::Object(m) = v {
            for (k, x) in m {
                let path = format!("{prefix}/{k}");
                out.push(path.clone());
                walk(x, &path, out);
            }
        }
    }
    walk(v, "", &mut out);
    out
}

#[test]
fn solve_worked_example_settles_at_the_analytic_optimum() {
    for method in ["aug-lagrangian", "primal-dual"] {
        let out = kktsynth(&["solve", p(&problem("eq5.mod")), "--method", method]);
        assert_eq!(code(&out), 0, "{method}: {}", stderr(&out));
        let v = json_stdout(&out);
        assert!((v["objective"].as_f64().unwrap() - 8.371875).abs() <= 1e-4);
        assert!((v["variables"]["x1"].as_f64().unwrap() - 0.7625).abs() <= 1e-4);
        assert!((v["variables"]["x2"].as_f64().unwrap() - 0.475).abs() <= 1e-4);
        assert!((v["duals"]["mu"][0].as_f64().unwrap() + 4.275).abs() <= 1e-4);
        assert_eq!(v["kkt"]["pass"], json!(true));
        assert_eq!(v["method"], json!(method));
    }
}

#[test]
fn solution_json_matches_the_golden_schema() {
    let golden: Value = serde_json::from_str(
        &fs::read_to_string(root().join("crates/cli/tests/data/solution_schema.json")).unwrap(),
    )
    .unwrap();
    let out = kktsynth(&["solve", p(&problem("eq5.mod")), "--oracle-check"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let v = json_stdout(&out);
    assert_eq!(shape(&v), golden);
    assert_eq!(keys(&v), keys(&golden), "key order");
}

#[test]
fn solution_written_to_a_file_equals_standard_output() {
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("sol.json");
    let out = kktsynth(&["solve", p(&problem("eq5.mps")), "--solution", p(&path)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(out.stdout.is_empty());
    let from_file: Value = serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
    let from_stdout = json_stdout(&kktsynth(&["solve", p(&problem("eq5.mps"))]));
    assert_eq!(from_file["variables"], from_stdout["variables"]);
    assert_eq!(from_file["objective"], from_stdout["objective"]);
}

#[test]
fn penalty_is_lenient_unless_strict() {
    let eq5 = problem("eq5.mod");
    let out = kktsynth(&["solve", p(&eq5), "--method", "penalty"]);
    assert_eq!(code(&out), 0);
    let v = json_stdout(&out);
    assert!(v["kkt"]["primal_eq"].as_f64().unwrap() > 1e-6);
    assert_eq!(v["kkt"]["pass"], json!(false));
    assert!(
        stderr(&out).contains("warning") && stderr(&out).contains("primal_eq"),
        "{}",
        stderr(&out)
    );

    let strict = kktsynth(&["solve", p(&eq5), "--method", "penalty", "--strict"]);
    assert_eq!(code(&strict), 3);
    assert!(stderr(&strict).contains("primal_eq"));
}

#[test]
fn usage_and_input_errors_exit_1() {
    let dir = TempDir::new().unwrap();
    let missing = kktsynth(&["solve", p(&dir.path().join("absent.mod"))]);
    assert_eq!(code(&missing), 1);
    assert!(stderr(&missing).contains("absent.mod"));

    let bad = dir.path().join("bad.mod");
    fs::write(&bad, "var x;\nminimize f: x^2 +;\n").unwrap();
    let out = kktsynth(&["solve", p(&bad)]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("bad.mod:2:"), "{}", stderr(&out));

    let unknown_ext = dir.path().join("eq5.txt");
    fs::copy(problem("eq5.mod"), &unknown_ext).unwrap();
    assert_eq!(code(&kktsynth(&["solve", p(&unknown_ext)])), 1);
    assert_eq!(
        code(&kktsynth(&["solve", p(&unknown_ext), "--format", "ampl"])),
        0
    );
    assert_eq!(
        code(&kktsynth(&["solve", p(&unknown_ext), "--format", "lp"])),
        1
    );

    assert_eq!(
        code(&kktsynth(&[
            "solve",
            p(&problem("eq5.mod")),
            "--method",
            "newton"
        ])),
        1
    );
    assert_eq!(
        code(&kktsynth(&[
            "solve",
            p(&problem("eq5.mod")),
            "--r-gamma",
            "-5"
        ])),
        1
    );
    assert_eq!(code(&kktsynth(&["frobnicate"])), 1);
    assert_eq!(code(&kktsynth(&[])), 1);
}

#[test]
fn short_horizon_exits_2() {
    let out = kktsynth(&["solve", p(&problem("eq5.mod")), "--t-stop", "1e-5"]);
    assert_eq!(code(&out), 2, "{}", stderr(&out));
    assert_eq!(json_stdout(&out)["settled"], json!(false));
}

#[test]
fn cubic_constraint_exits_4() {
    let dir = TempDir::new().unwrap();
    let cir = dir.path().join("cubic.cir");
    let out = kktsynth(&["synth", p(&problem("cubic.mod")), "-o", p(&cir)]);
    assert_eq!(code(&out), 4);
    assert!(stderr(&out).contains("degree 3"), "{}", stderr(&out));
    assert!(!cir.exists());
    assert_eq!(code(&kktsynth(&["solve", p(&problem("cubic.mod"))])), 4);
    assert_eq!(code(&kktsynth(&["check", p(&problem("cubic.mod"))])), 4);
}

#[test]
fn synth_matches_the_golden_netlist() {
    let dir = TempDir::new().unwrap();
    let cir = dir.path().join("eq5.cir");
    let out = kktsynth(&["synth", p(&problem("eq5.mod")), "-o", p(&cir)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert_eq!(
        fs::read_to_string(&cir).unwrap(),
        fs::read_to_string(root().join("golden/eq5_auglag.cir")).unwrap()
    );
    let stdout = String::from_utf8(out.stdout).unwrap();
    for line in ["opamps: 16", "diodes: 4", "capacitors: 7"] {
        assert!(
            stdout.lines().any(|l| l == line),
            "missing `{line}` in\n{stdout}"
        );
    }
}

#[test]
fn solve_and_synth_share_one_compile() {
    let dir = TempDir::new().unwrap();
    for (source, method) in [
        ("eq5.mod", "aug-lagrangian"),
        ("eq5.mps", "primal-dual"),
        ("eq5.mod", "penalty"),
    ] {
        let a = dir.path().join("a.cir");
        let b = dir.path().join("b.cir");
        assert_eq!(
            code(&kktsynth(&[
                "synth",
                p(&problem(source)),
                "--method",
                method,
                "-o",
                p(&a)
            ])),
            0
        );
        let out = kktsynth(&[
            "solve",
            p(&problem(source)),
            "--method",
            method,
            "--netlist",
            p(&b),
        ]);
        assert!(out.status.code().is_some());
        assert_eq!(
            fs::read(&a).unwrap(),
            fs::read(&b).unwrap(),
            "{source} {method}"
        );
    }
}

#[test]
fn gain_overrides_reach_the_netlist_and_the_report() {
    let dir = TempDir::new().unwrap();
    let cir = dir.path().join("g.cir");
    let out = kktsynth(&[
        "solve",
        p(&problem("eq5.mod")),
        "--r-rho",
        "200e3",
        "--t-stop",
        "0.1",
        "--netlist",
        p(&cir),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let v = json_stdout(&out);
    assert_eq!(v["gains"]["kappa_p"], json!(20.0));
    assert!(fs::read_to_string(&cir)
        .unwrap()
        .lines()
        .any(|l| l.starts_with("Rrc1 ") && l.ends_with(" 2e5")));
}

#[test]
fn waveform_has_time_and_every_state() {
    let dir = TempDir::new().unwrap();
    let wave = dir.path().join("w.csv");
    let out = kktsynth(&["solve", p(&problem("eq5.mod")), "--waveform", p(&wave)]);
    assert_eq!(code(&out), 0);
    let text = fs::read_to_string(&wave).unwrap();
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(header[0], "time");
    assert_eq!(
        header[1..],
        ["v1", "v2", "lam1", "lam2", "lam3", "lam4", "mu1"]
    );
    assert!(lines.count() > 10);
}

#[test]
fn check_confirms_every_method() {
    for method in ["penalty", "primal-dual", "aug-lagrangian"] {
        let out = kktsynth(&["check", p(&problem("eq5.mod")), "--method", method]);
        assert_eq!(code(&out), 0, "{method}: {}", stderr(&out));
        let v = json_stdout(&out);
        assert_eq!(v["census_match"], json!(true));
        assert_eq!(v["equivalence"]["pass"], json!(true));
        assert_eq!(v["variables"], json!(2));
        assert_eq!(v["max_constraint_degree"], json!(2));
    }
}

fn tiny_suite(methods: &[&str]) -> Value {
    let instances: Vec<Value> = (0..3)
        .map(|i| json!({ "seed": 40 + i, "n": 3 + i, "m_lin": 1, "m_quad": 1, "p_eq": 1, "density": "dense" }))
        .collect();
    json!({ "instances": instances, "methods": methods, "t_stop": 0.05 })
}

#[test]
fn bench_runs_every_instance_method_pair() {
    let dir = TempDir::new().unwrap();
    let suite = dir.path().join("suite.json");
    fs::write(
        &suite,
        tiny_suite(&["penalty", "primal-dual", "aug-lagrangian"]).to_string(),
    )
    .unwrap();
    let out_dir = dir.path().join("out");
    let out = Command::new(env!("CARGO_BIN_EXE_kktsynth"))
        .args(["bench", p(&suite), "-o", p(&out_dir)])
        .env("KKTSYNTH_THREADS", "2")
        .output()
        .unwrap();
    // Penalty's equality bias trips the accuracy gate.
    assert_eq!(code(&out), 5, "{}", stderr(&out));
    let csv = fs::read_to_string(out_dir.join("bench.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next().unwrap(),
        "problem_id,n,m,p,density,method,settling_time_s,wall_time_s,rel_error_pct,kkt_pass,settled,error"
    );
    assert_eq!(lines.count(), 9);
    let summary: Value =
        serde_json::from_str(&fs::read_to_string(out_dir.join("summary.json")).unwrap()).unwrap();
    for key in [
        "mean_time_ms",
        "median_time_ms",
        "mean_rel_err_pct",
        "median_rel_err_pct",
        "per_method",
    ] {
        assert!(summary.get(key).is_some(), "summary lacks {key}");
    }
    assert_eq!(summary["per_method"].as_object().unwrap().len(), 3);
    assert_eq!(summary["gate_pass"], json!(false));
}

#[test]
fn bench_passes_the_gate_without_penalty() {
    let dir = TempDir::new().unwrap();
    let suite = dir.path().join("suite.json");
    fs::write(
        &suite,
        tiny_suite(&["primal-dual", "aug-lagrangian"]).to_string(),
    )
    .unwrap();
    let out = kktsynth(&["bench", p(&suite), "-o", p(dir.path())]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
}

#[test]
fn bench_input_errors_exit_1() {
    let dir = TempDir::new().unwrap();
    let empty = dir.path().join("empty.json");
    fs::write(&empty, r#"{"instances": []}"#).unwrap();
    let out = kktsynth(&["bench", p(&empty), "-o", p(dir.path())]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("no instances"));

    let garbled = dir.path().join("garbled.json");
    fs::write(&garbled, r#"{"instances": [{"seed": 1}]"#).unwrap();
    assert_eq!(
        code(&kktsynth(&["bench", p(&garbled), "-o", p(dir.path())])),
        1
    );

    let suite = dir.path().join("suite.json");
    fs::write(&suite, tiny_suite(&["aug-lagrangian"]).to_string()).unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_kktsynth"))
        .args(["bench", p(&suite), "-o", p(dir.path())])
        .env("KKTSYNTH_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("KKTSYNTH_THREADS"));
}
