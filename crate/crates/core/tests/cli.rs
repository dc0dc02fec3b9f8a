use std::fs;
use std::path::Path;
use std::process::Command;

const REF: &str = "# d=1 reference\nmodel.m = 1\nmodel.f = 1\nmodel.tangential = 1\nmodel.n_space = 8\nfrequency.amplitudes = 1e-2\n";

fn run(args: &[&str]) -> (i32, String, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_nlwtori")).args(args).output().unwrap();
    (out.status.code().unwrap(), String::from_utf8_lossy(&out.stdout).into_owned(), String::from_utf8_lossy(&out.stderr).into_owned())
}

fn write_cfg(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

fn json(p: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

#[test]
fn solve_then_verify_reference() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_cfg(dir.path(), "ref.cfg", REF);
    let out = dir.path().join("out");
    let o = out.to_str().unwrap();
    let (code, stdout, err) = run(&["solve", "--config", &cfg, "--out", o]);
    assert_eq!(code, 0, "{err}");
    assert!(stdout.contains("converged"));
    for f in ["solution.json", "diagnostics.json", "residual.csv", "record.json"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let sol = json(&out.join("solution.json"));
    assert!(sol["residual"]["fp"].as_f64().unwrap() < 1e-10);
    let csv = fs::read_to_string(out.join("residual.csv")).unwrap();
    assert!(csv.starts_with("level,z_norm,"));
    assert!(!csv.contains('\r'));
    assert_eq!(csv.lines().count(), 7);
    let rec = json(&out.join("record.json"));
    assert_eq!(rec["config_text"].as_str().unwrap(), REF);
    assert_eq!(rec["input_hash"].as_str().unwrap().len(), 64);

    let (code, stdout, err) = run(&["verify", "--config", &cfg, "--out", o]);
    assert_eq!(code, 0, "{stdout}{err}");
    let rep = json(&out.join("verify_report.json"));
    assert_eq!(rep["pass"], true);
    assert_eq!(rep["checks"].as_array().unwrap().len(), 5);

    // one coefficient perturbed by 1e-3
    let mut bad = sol.clone();
    let re = bad["z"]["re"].as_array_mut().unwrap();
    let i = re.iter().enumerate().max_by(|a, b| a.1.as_f64().unwrap().abs().total_cmp(&b.1.as_f64().unwrap().abs())).unwrap().0;
    re[i] = serde_json::json!(re[i].as_f64().unwrap() + 1e-3);
    let bad_path = dir.path().join("bad.json");
    fs::write(&bad_path, bad.to_string()).unwrap();
    let bo = dir.path().join("bad_out");
    let (code, _, err) = run(&["verify", "--config", &cfg, "--out", bo.to_str().unwrap(), "--solution", bad_path.to_str().unwrap(), "--quiet"]);
    assert_eq!(code, 1);
    assert!(err.contains("residual_fp"), "{err}");
    let rep = json(&bo.join("verify_report.json"));
    assert_eq!(rep["pass"], false);
}

#[test]
fn zero_lambda_is_trivial() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_cfg(dir.path(), "z.cfg", &format!("{REF}solver.lambda = 0\nverify.amplitudes = 1e-3, 2e-3\n"));
    let o = dir.path().join("o");
    let (code, _, err) = run(&["solve", "--config", &cfg, "--out", o.to_str().unwrap(), "--quiet"]);
    assert_eq!(code, 0, "{err}");
    let sol = json(&o.join("solution.json"));
    assert!(sol["z"]["re"].as_array().unwrap().iter().all(|v| v.as_f64() == Some(0.0)));
    assert_eq!(sol["residual"]["fp"].as_f64(), Some(0.0));
    let diag = json(&o.join("diagnostics.json"));
    assert_eq!(diag["levels"].as_array().unwrap().len(), 1);
    let (code, _, err) = run(&["verify", "--config", &cfg, "--out", o.to_str().unwrap(), "--quiet"]);
    assert_eq!(code, 0, "{err}");
}

#[test]
fn resonant_frequency_exits_2_with_witness() {
    let dir = tempfile::tempdir().unwrap();
    // omega = mu_2 = sqrt 5 resonates with block 2 at q = 1
    let cfg = write_cfg(dir.path(), "r.cfg", &format!("{REF}frequency.omega = 2.2360679774997896964\n"));
    let o = dir.path().join("o");
    let (code, _, err) = run(&["solve", "--config", &cfg, "--out", o.to_str().unwrap()]);
    assert_eq!(code, 2);
    assert!(err.contains("q = [1]") && err.contains("Single { k: 2 }"), "{err}");
    assert!(o.join("witness.json").exists());
}

#[test]
fn malformed_config_exits_64() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_cfg(dir.path(), "m.cfg", &format!("{REF}solver.levels = many\n"));
    let (code, _, err) = run(&["solve", "--config", &cfg, "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code, 64);
    assert!(err.contains("line 7") && err.contains("solver.levels"), "{err}");
    let (code, _, _) = run(&["solve", "--out", "x"]);
    assert_eq!(code, 64);
    let (code, _, _) = run(&["solve", "--config", dir.path().join("missing.cfg").to_str().unwrap(), "--out", "x"]);
    assert_eq!(code, 64);
}

#[test]
fn measure_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let text = format!("{REF}measure.samples = 1000\nmeasure.k_grid = 1e-1, 1e-2, 1e-3, 1e-4\nmeasure.kmax = 80\n");
    let cfg = write_cfg(dir.path(), "m.cfg", &text);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for o in [&a, &b] {
        let (code, _, err) = run(&["measure", "--config", &cfg, "--out", o.to_str().unwrap(), "--seed", "7", "--quiet"]);
        assert_eq!(code, 0, "{err}");
    }
    let ca = fs::read(a.join("measure.csv")).unwrap();
    assert_eq!(ca, fs::read(b.join("measure.csv")).unwrap());
    let text = String::from_utf8(ca).unwrap();
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let rows: Vec<Vec<f64>> = rdr.records().map(|r| r.unwrap().iter().map(|v| v.parse().unwrap()).collect()).collect();
    assert_eq!(rows.len(), 4);
    for w in rows.windows(2) {
        assert!(w[1][1] <= w[0][3], "fraction rises beyond the CI");
    }
    let s = json(&a.join("measure_summary.json"));
    let slope: f64 = s["slope"].as_str().unwrap().parse().unwrap();
    assert!(slope.is_finite());
    assert_eq!(json(&a.join("record.json"))["seed"], 7);
}

#[test]
fn normal_form_and_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_cfg(dir.path(), "n.cfg", REF);
    let o = dir.path().join("o");
    let (code, stdout, err) = run(&["normal-form", "--config", &cfg, "--out", o.to_str().unwrap(), "--levels", "3"]);
    assert_eq!(code, 0, "{err}");
    assert!(stdout.contains("gbar"));
    let nf = json(&o.join("normal_form.json"));
    let g = nf["gbar"][0][0].as_f64().unwrap();
    assert!((g - 9.0 / (32.0 * std::f64::consts::PI)).abs() < 1e-15);
    assert!(nf["nonresonant_max"].as_f64().unwrap() < 1e-12);
    assert_eq!(json(&o.join("record.json"))["levels"], 3);
}
