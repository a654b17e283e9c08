use std::process::{Command, Output};

fn itreg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_itreg"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn generate_then_fit_from_file() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.csv");
    let data_s = data.to_str().unwrap();
    let o = itreg(&["generate", "--loss", "logistic", "--r", "3.25", "--n", "50", "--seed", "4", "--out", data_s]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("target order 8"));
    let text = std::fs::read_to_string(&data).unwrap();
    assert!(text.starts_with("x,y,theta_star\n"));
    assert_eq!(text.lines().count(), 51);
    assert!(std::fs::read_to_string(dir.path().join("d.csv.meta")).unwrap().contains("loss=logistic"));

    let report = dir.path().join("fit.json");
    let o = itreg(&[
        "fit", "--data", data_s, "--lambda", "0.05", "--t", "3", "--mc-samples", "300", "--out",
        report.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(v["coefficients"].as_array().unwrap().len(), 50);
    assert_eq!(v["achieved_decrements"].as_array().unwrap().len(), 3);
    assert!(v["excess_risk"].as_f64().unwrap().is_finite());
}

#[test]
fn sweep_then_rate() {
    let dir = tempfile::tempdir().unwrap();
    let recs = dir.path().join("r.csv");
    let o = itreg(&[
        "sweep", "--loss", "squared", "--n-grid", "32,48,64", "--t-list", "1,2", "--lambda-count", "4",
        "--lambda-min", "1e-3", "--lambda-max", "1e-1", "--reps", "2", "--mc-samples", "300", "--threads", "2",
        "--out", recs.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(&recs).unwrap();
    assert!(text.starts_with("loss,r,alpha,t,n,lambda,seed,excess_risk,std_error,chosen,wall_time_ms\n"));
    assert_eq!(text.lines().count(), 1 + 3 * 2 * 4 * 2);

    let json = dir.path().join("rates.json");
    let plot = dir.path().join("plot.csv");
    let o = itreg(&[
        "rate", recs.to_str().unwrap(), "--out", json.to_str().unwrap(), "--plot", plot.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("gamma"));
    let fits: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&json).unwrap()).unwrap();
    assert_eq!(fits.as_array().unwrap().len(), 2);
    assert!(fits[0]["gamma_theory"].as_f64().unwrap() > 0.0);
    assert_eq!(std::fs::read_to_string(&plot).unwrap().lines().count(), 1 + 48);
}

#[test]
fn oracle_check_passes() {
    let o = itreg(&["oracle-check", "--n", "60", "--lambda-list", "0.01,0.1", "--t-list", "1,4"]);
    assert!(o.status.success(), "{}", stdout(&o));
    assert_eq!(stdout(&o).lines().filter(|l| l.contains("e-")).count(), 5);
}

#[test]
fn qualification_report() {
    let o = itreg(&["qualification", "--t-list", "2", "--nu", "1", "--lambda-list", "0.1", "--grid-points", "1000"]);
    assert!(o.status.success());
    let out = stdout(&o);
    assert!(out.contains("2.500000e-2") && out.contains("5.000000e-2"), "{out}");
}

#[test]
fn bad_smoothness_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = itreg(&["generate", "--r", "0.5", "--out", dir.path().join("x.csv").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("even integer"));
}

#[test]
fn tolerance_above_bound_rejected() {
    let o = itreg(&["fit", "--n", "20", "--lambda", "0.04", "--eps", "0.2"]);
    assert_eq!(o.status.code(), Some(2));
}
