use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn lab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_blowup-lab"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.display().to_string()
}

const PART2: &str = r#"
name = "p2"
system = "part2"
alpha_list = [0.0]
seed = 3
generic_labels = 4
[outputs]
timeseries_csv = "series.csv"
summary_json = "summary.json"
"#;

#[test]
fn config_errors_exit_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = lab(&["run", dir.path().join("missing.toml").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));

    let empty = write(dir.path(), "e.toml", "name = \"e\"\nsystem = \"euler\"\ngamma0 = \"cos(2*pi*x)\"\nalpha_list = []\n");
    let out = lab(&["run", &empty]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("alpha_list is empty"));

    let unknown = write(dir.path(), "u.toml", "name = \"u\"\nsystem = \"part2\"\nalpha_list = [0.0]\nbogus = 1\n");
    assert_eq!(lab(&["run", &unknown]).status.code(), Some(2));

    let sym = write(dir.path(), "s.toml", "name = \"s\"\nsystem = \"part2\"\nalpha_list = [\"critical\"]\n");
    assert_eq!(lab(&["run", &sym]).status.code(), Some(2));

    let ok = write(dir.path(), "ok.toml", PART2);
    assert_eq!(lab(&["compare", &ok, "--horizon", "1.5"]).status.code(), Some(2));
    assert_eq!(lab(&["run", &ok, "--grid-n", "3"]).status.code(), Some(2));
}

#[test]
fn runs_are_deterministic_and_respect_out_dir() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "p2.toml", PART2);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for d in [&a, &b] {
        let out = lab(&["run", &cfg, "--out-dir", d.to_str().unwrap()]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let csv_a = fs::read(a.join("series.alpha0.csv")).unwrap();
    let csv_b = fs::read(b.join("series.alpha0.csv")).unwrap();
    assert_eq!(csv_a, csv_b);

    let summary: serde_json::Value = serde_json::from_slice(&fs::read(a.join("summary.json")).unwrap()).unwrap();
    let rec = &summary["records"][0];
    assert_eq!(rec["blowup_kind"], "J_to_zero");
    assert!((rec["t_est"].as_f64().unwrap() - 2.0).abs() < 1e-3);
    assert_eq!(summary["watch_labels"].as_array().unwrap().len(), 2 + 4);

    // another seed moves the generic labels and therefore the J columns
    let c = dir.path().join("c");
    let out = lab(&["run", &cfg, "--seed", "4", "--out-dir", c.to_str().unwrap()]);
    assert!(out.status.success());
    assert_ne!(fs::read(c.join("series.alpha0.csv")).unwrap(), csv_a);

    // part-2 runs have no Euler decay window, so the rate fit has no window
    let rates = lab(&["rates", a.join("series.alpha0.csv").to_str().unwrap(), "--model", "phi1_log"]);
    assert!(rates.status.code() == Some(0) || rates.status.code() == Some(3));
    let bad = lab(&["rates", dir.path().join("nope.csv").to_str().unwrap(), "--model", "phi1_log"]);
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn rates_without_blowup_exit_with_3() {
    let dir = tempfile::tempdir().unwrap();
    let csv = write(
        dir.path(),
        "s.csv",
        "blowup,delta,phi1,m2,gamma_min,gamma_generic\n0,0.1,1,1,1,1\n0,0.01,1,1,1,1\n",
    );
    let out = lab(&["rates", &csv, "--model", "moment_inverse"]);
    assert_eq!(out.status.code(), Some(3));
    let missing = write(dir.path(), "m.csv", "delta,phi1\n0.1,1\n");
    assert_eq!(lab(&["rates", &missing, "--model", "phi1_log"]).status.code(), Some(3));
}
