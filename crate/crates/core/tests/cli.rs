use std::path::Path;
use std::process::{Command, Output};

fn noutput(dir: &Path, args: &[&str]) -> Output {
    let out = Command::new(env!("CARGO_BIN_EXE_noutput"))
        .args(args)
        .current_dir(dir)
        .env("NOUTPUT_CACHE_DIR", dir.join("cache"))
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "noutput {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

#[test]
fn design_perturb_and_estimate_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let mut body = String::from("x\n");
    for k in 0..4000 {
        body.push_str(&format!("{}\n", ((k * 7) % 201) as f64 / 100.0 - 1.0));
    }
    std::fs::write(p.join("x.csv"), body).unwrap();

    let out = noutput(p, &["design", "--analytical", "--epsilon", "2", "-o", "d.json"]);
    assert!(String::from_utf8_lossy(&out.stderr).contains("worst-case variance"));
    noutput(p, &["perturb", "--design", "d.json", "--input", "x.csv", "--seed", "4", "-o", "r.csv"]);
    let again = noutput(p, &["perturb", "--design", "d.json", "--input", "x.csv", "--seed", "4"]);
    assert_eq!(std::fs::read_to_string(p.join("r.csv")).unwrap(), stdout(&again));

    let mean = stdout(&noutput(p, &["estimate-mean", "--design", "d.json", "--reports", "r.csv"]));
    let mut lines = mean.lines();
    assert_eq!(lines.next(), Some("mechanism,epsilon,n,mean"));
    let est: f64 = lines.next().unwrap().rsplit(',').next().unwrap().parse().unwrap();
    assert!(est.abs() < 0.1, "mean estimate {est}");

    let hist = stdout(&noutput(
        p,
        &["estimate-dist", "--design", "d.json", "--reports", "r.csv", "--bins", "8", "--theta-out", "t.csv"],
    ));
    assert_eq!(hist.lines().next(), Some("mechanism,epsilon,d,bin,lo,hi,pi"));
    assert_eq!(hist.lines().count(), 9);
    assert!(std::fs::read_to_string(p.join("t.csv")).unwrap().starts_with("mechanism,epsilon,d,d_tilde,output"));

    let var = stdout(&noutput(p, &["estimate-var", "--design", "d.json", "--reports", "r.csv"]));
    assert!(var.starts_with("mechanism,epsilon,n,bins,iterations,variance"));
}

#[test]
fn piecewise_reports_use_the_output_range() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    std::fs::write(p.join("x.csv"), "v\n0.5\n-0.5\n0.25\n1\n").unwrap();
    noutput(p, &["perturb", "--pm", "1", "--input", "x.csv", "-o", "r.csv"]);
    let hist = stdout(&noutput(p, &["estimate-dist", "--pm", "1", "--reports", "r.csv", "--bins", "4"]));
    assert_eq!(hist.lines().count(), 5);
}

#[test]
fn bench_writes_csvs_and_cache_commands_work() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    std::fs::write(
        p.join("bench.toml"),
        "suites = [\"a\", \"c\"]\nmechanisms = [\"duchi\", \"pm\"]\nepsilons = [1.0]\ntrials = 2\nusers = 500\n",
    )
    .unwrap();
    noutput(p, &["bench", "--config", "bench.toml", "--suite", "theory", "--suite", "mean", "--output", "out"]);
    let summary = std::fs::read_to_string(p.join("out/summary.csv")).unwrap();
    assert!(summary.starts_with("mechanism,epsilon,task,metric,mean,std,trials,seed0,bits"));
    assert!(p.join("out/trials.csv").exists() && p.join("out/failures.csv").exists());

    noutput(p, &["design", "--numerical", "--epsilon", "1", "--select-n", "--n-max", "3", "-o", "n.json"]);
    let ls = stdout(&noutput(p, &["cache", "ls"]));
    assert_eq!(ls.lines().count(), 2, "{ls}");
    noutput(p, &["cache", "clear"]);
    assert_eq!(stdout(&noutput(p, &["cache", "ls"])).lines().count(), 1);
}

#[test]
fn bad_input_fails_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_noutput"))
        .args(["design", "--analytical", "--epsilon", "-1"])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
    std::fs::write(dir.path().join("x.csv"), "x\n3\n").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_noutput"))
        .args(["perturb", "--pm", "1", "--input"])
        .arg(dir.path().join("x.csv"))
        .output()
        .unwrap();
    assert!(!out.status.success());
}
