use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_multising"));
    c.env("RUST_LOG", "warn");
    c
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn report(dir: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(dir.join("report.json")).unwrap()).unwrap()
}

fn num(v: &Value) -> f64 {
    v.as_f64().expect("number")
}

#[test]
fn string_for_number_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(
        &cfg,
        "[field]\nbuiltin = \"lorenz\"\n[orbit]\nx0 = [0.0, 0.0, 0.0]\nt_total = \"long\"\n",
    )
    .unwrap();
    let out = dir.path().join("out");
    let o = run(&["singularities", "--config", path(&cfg), "--out", path(&out)]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("/orbit/t_total"), "{err}");
    assert!(!out.join("report.json").exists());
}

#[test]
fn unknown_key_is_rejected_with_its_path() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(
        &cfg,
        "[field]\nbuiltin = \"lorenz\"\n[[checks]]\nnotion = \"uniform\"\ngrid = [[0.1, 1.0]]\nradius = 3.0\n",
    )
    .unwrap();
    let o = run(&["verdicts", "--config", path(&cfg), "--out", path(dir.path())]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("/checks/0"), "{err}");
    assert!(err.contains("radius"), "{err}");
    assert!(!dir.path().join("report.json").exists());
}

#[test]
fn missing_section_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    fs::write(&cfg, "[field]\nbuiltin = \"rotation2d\"\n").unwrap();
    let o = run(&["lyapunov", "--config", path(&cfg), "--out", path(dir.path())]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("/lyapunov"));
}

// Oracle: the Lorenz Jacobian at a zero has characteristic polynomial
// det(λ − J); at the origin the roots are (−11 ± √1201)/2 and −8/3, at
// C± = (±√(β(ρ−1)), ±√(β(ρ−1)), ρ−1) it is
// λ³ + (σ+β+1)λ² + β(σ+ρ)λ + 2σβ(ρ−1).
#[test]
fn lorenz_singularities_match_closed_forms() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["singularities", "--config", path(&configs().join("lorenz.toml")), "--out", path(dir.path())]);
    assert_eq!(o.status.code(), Some(0));
    let r = report(dir.path());
    let sings = r["results"]["singularities"].as_array().unwrap();
    assert_eq!(sings.len(), 3);
    let (s, rho, b) = (10.0, 28.0, 8.0 / 3.0);
    let c = (b * (rho - 1.0) as f64).sqrt();
    for z in sings {
        let loc: Vec<f64> = z["location"].as_array().unwrap().iter().map(num).collect();
        let eig: Vec<(f64, f64)> = z["eigenvalues"]
            .as_array()
            .unwrap()
            .iter()
            .map(|p| (num(&p[0]), num(&p[1])))
            .collect();
        assert_eq!(eig.len(), 3);
        if loc.iter().all(|v| v.abs() < 1e-8) {
            let mut re: Vec<f64> = eig.iter().map(|e| e.0).collect();
            re.sort_by(f64::total_cmp);
            let mut want = [(-11.0 - 1201f64.sqrt()) / 2.0, -8.0 / 3.0, (-11.0 + 1201f64.sqrt()) / 2.0];
            want.sort_by(f64::total_cmp);
            for (g, w) in re.iter().zip(want) {
                assert!((g - w).abs() < 1e-8, "{g} vs {w}");
            }
        } else {
            assert!((loc[0].abs() - c).abs() < 1e-8 && (loc[1] - loc[0]).abs() < 1e-8);
            assert!((loc[2] - (rho - 1.0)).abs() < 1e-8);
            for (re, im) in eig {
                // Complex evaluation of the cubic.
                let (mut pr, mut pi) = (1.0, 0.0);
                for coef in [s + b + 1.0, b * (s + rho), 2.0 * s * b * (rho - 1.0)] {
                    let (nr, ni) = (pr * re - pi * im, pr * im + pi * re);
                    pr = nr + coef;
                    pi = ni;
                }
                let scale = 2.0 * s * b * (rho - 1.0);
                assert!((pr * pr + pi * pi).sqrt() < 1e-8 * scale, "residual at {re} + {im}i");
            }
        }
    }
}

#[test]
fn failing_verdict_exits_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    // The normal gap of the saddle cycle is 1.5, so η = 2 cannot be certified.
    fs::write(
        &cfg,
        r#"
[field]
builtin = "saddle-cycle"
[orbit]
x0 = [1.0, 0.0, 0.0]
t_total = 20.0
transient = 0.0
[lambda]
provenance = "orbit-closure"
[[checks]]
notion = "multi-singular"
grid = [[2.0, 2.0]]
v_radius = 0.5
"#,
    )
    .unwrap();
    let o = run(&["verdicts", "--config", path(&cfg), "--out", path(dir.path())]);
    assert_eq!(o.status.code(), Some(1));
    let r = report(dir.path());
    assert_eq!(r["all_pass"], Value::Bool(false));
    assert_eq!(r["results"]["checks"][0]["pass"], Value::Bool(false));
}

#[test]
fn effective_config_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    fs::write(&cfg, "seed = 3\n[field]\nbuiltin = \"cubic1d-product\"\n[chain]\nresolution = 16\n").unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let o = run(&["chain-classes", "--config", path(&cfg), "--out", path(&a), "--seed", "11"]);
    assert_eq!(o.status.code(), Some(0));
    let o = run(&["chain-classes", "--config", path(&a.join("effective-config.toml")), "--out", path(&b)]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(fs::read(a.join("report.json")).unwrap(), fs::read(b.join("report.json")).unwrap());
    let r = report(&a);
    assert_eq!(r["effective_config"]["seed"], Value::from(11));
    assert_eq!(num(&r["effective_config"]["chain"]["t_edge"]), 3.0);
    assert!(r["results"]["classes"].as_array().is_some());
}

#[test]
fn thread_count_does_not_change_reports() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    fs::write(&cfg, "[field]\nbuiltin = \"cubic1d-product\"\n[chain]\nresolution = 16\n").unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    assert_eq!(run(&["chain-classes", "--config", path(&cfg), "--out", path(&a), "--threads", "1"]).status.code(), Some(0));
    assert_eq!(run(&["chain-classes", "--config", path(&cfg), "--out", path(&b), "--threads", "3"]).status.code(), Some(0));
    assert_eq!(fs::read(a.join("report.json")).unwrap(), fs::read(b.join("report.json")).unwrap());
}

#[test]
fn lyapunov_on_a_linear_field_writes_convergence_series() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    fs::write(
        &cfg,
        r#"
[field]
builtin = "linear"
params = { A = [[-2.0, 0.0, 0.0], [0.0, -1.0, 0.0], [0.0, 0.0, 1.0]] }
[lyapunov]
x0 = [0.1, 0.2, 0.0]
t_total = 20.0
dt = 0.01
"#,
    )
    .unwrap();
    let o = run(&["lyapunov", "--config", path(&cfg), "--out", path(dir.path())]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let r = report(dir.path());
    let ex: Vec<f64> = r["results"]["spectrum"]["exponents"].as_array().unwrap().iter().map(num).collect();
    for (g, w) in ex.iter().zip([1.0, -1.0, -2.0]) {
        assert!((g - w).abs() < 1e-6, "{g} vs {w}");
    }
    let csv = fs::read_to_string(dir.path().join("exponents.csv")).unwrap();
    assert!(csv.starts_with("t,exponent_0,exponent_1,exponent_2\n"));
    assert!(csv.lines().count() > 10);
}

#[test]
fn point_list_lambda_feeds_domination() {
    let dir = tempfile::tempdir().unwrap();
    let mut pts = String::from("x0,x1,x2\n");
    for k in 0..6 {
        let a = k as f64 * std::f64::consts::TAU / 6.0;
        pts.push_str(&format!("{:.17e},{:.17e},0.0\n", a.cos(), a.sin()));
    }
    fs::write(dir.path().join("circle.csv"), pts).unwrap();
    let cfg = dir.path().join("c.toml");
    fs::write(
        &cfg,
        r#"
[field]
builtin = "saddle-cycle"
[lambda]
provenance = "point-list"
file = "circle.csv"
[domination]
index = 1
grid = [[0.2, 2.0]]
segment_time = 8.0
"#,
    )
    .unwrap();
    let out = dir.path().join("out");
    let o = run(&["domination", "--config", path(&cfg), "--out", path(&out)]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let r = report(&out);
    assert_eq!(r["results"]["lambda"]["points"], Value::from(6));
    assert_eq!(r["results"]["runs"][0]["pass"], Value::Bool(true));
    let csv = fs::read_to_string(out.join("domination.csv")).unwrap();
    assert!(csv.starts_with("eta,T,label,t,log_ratio\n"));
    // Every tested time is certified below 0.
    for line in csv.lines().skip(1) {
        let r: f64 = line.rsplit(',').next().unwrap().parse().unwrap();
        assert!(r < 0.0, "{line}");
    }
}

#[test]
fn strict_vacuous_flag_is_recorded() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    fs::write(&cfg, "[field]\nbuiltin = \"rotation2d\"\n").unwrap();
    let o = run(&["singularities", "--config", path(&cfg), "--out", path(dir.path()), "--strict-vacuous"]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(report(dir.path())["effective_config"]["strict_vacuous"], Value::Bool(true));
}

#[test]
fn report_floats_carry_seventeen_digits() {
    let v = serde_json::json!({ "x": 0.1, "y": f64::NAN, "n": 3 });
    let s = multising_cli::report::to_json(&v).unwrap();
    assert!(s.contains("1.0000000000000001e-1"), "{s}");
    assert!(s.contains("\"y\": null"));
    assert!(s.contains("\"n\": 3"));
    let back: Value = serde_json::from_str(&s).unwrap();
    assert_eq!(back["x"].as_f64(), Some(0.1));
}
