use std::path::Path;
use std::process::{Command, Output};

fn sentinel(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sentinel")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

const SHORT: &str = "t_end = 1200\nt_seed_period = 300\nincident_start = 300\nruns_per_case = 1\n";

#[test]
fn prob_agrees_with_oracle() {
    let lane = "--lane=22,3.2,0.6,45,3";
    let args = ["--d", "900", "--ego-speed", "28", lane];
    let p = sentinel(&[&["prob"], &args[..]].concat());
    assert!(p.status.success(), "{}", stderr(&p));
    let o = sentinel(&[&["oracle", "--base", "--samples", "100000", "--seed", "5"], &args[..]].concat());
    assert!(o.status.success(), "{}", stderr(&o));
    let p: f64 = stdout(&p).trim().parse().unwrap();
    let mc: f64 = stdout(&o).split_whitespace().next().unwrap().parse().unwrap();
    assert!((p - mc).abs() <= 0.02, "table {p} vs oracle {mc}");
    assert!(stdout(&o).contains('±'));
}

#[test]
fn multilane_prob_and_oracle() {
    let args = ["--d", "2000", "--ego-speed", "30", "--lane=24,3.5,0.5,49,3", "--lane=18,3.5,0.5,40,3"];
    let p = sentinel(&[&["prob"], &args[..]].concat());
    let o = sentinel(&[&["oracle", "--multilane", "--samples", "50000"], &args[..]].concat());
    let p: f64 = stdout(&p).trim().parse().unwrap();
    let mc: f64 = stdout(&o).split_whitespace().next().unwrap().parse().unwrap();
    assert!((p - mc).abs() <= 0.04, "recursion {p} vs oracle {mc}");
}

#[test]
fn config_errors_exit_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write(dir.path(), "bad.conf", "q_i = 6400\nlane_count = 3\n");
    let out = dir.path().join("out");
    let o = sentinel(&["run", "--config", &bad, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("lane_count"));

    let list = write(dir.path(), "list.conf", "q_i = 6400, 7200\n");
    let o = sentinel(&["run", "--config", &list, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));

    let o = sentinel(&["oracle", "--base", "--d", "100", "--ego-speed", "20", "--lane=1,2,3,4,5", "--lane=1,2,3,4,5"]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(sentinel(&["run"]).status.code(), Some(2));
}

#[test]
fn sweep_skips_excluded_cells_and_reports() {
    let dir = tempfile::tempdir().unwrap();
    let matrix = write(
        dir.path(),
        "matrix.conf",
        &format!("{SHORT}q_i = 6400\nr = 0.7\ngamma_i = 300, 600\np_l = 0.95, 0.7\nexclusions = 6400/600\n"),
    );
    let out = dir.path().join("out");
    let o = sentinel(&["sweep", "--matrix", &matrix, "--out", out.to_str().unwrap(), "--parallel", "2"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stderr(&o).contains("skipping q_i = 6400, gamma_i = 600"));
    let mut cases: Vec<String> =
        std::fs::read_dir(&out).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
    cases.sort();
    assert_eq!(cases, ["q6400_g300_baseline", "q6400_r0.7_g300_p0.7", "q6400_r0.7_g300_p0.95"]);
    assert!(out.join("q6400_r0.7_g300_p0.95/run-42/events.csv").is_file());
    assert!(!out.join("q6400_r0.7_g300_p0.95/run-42/states.csv").exists());

    let report = dir.path().join("report");
    let o = sentinel(&["report", "--in", out.to_str().unwrap(), "--out", report.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let table = std::fs::read_to_string(report.join("table_g300.csv")).unwrap();
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines[0], "q_i,p_l,m_r70,s_r70,a_r70");
    assert!(lines[1].starts_with("6400.000,baseline,"));
    assert!(lines[2].starts_with("6400.000,0.950,") && lines[2].contains('%'));
    assert!(lines[3].starts_with("6400.000,0.700,"));

    // Deltas come from the stored summaries alone.
    let summary = |id: &str| {
        let text = std::fs::read_to_string(out.join(id).join("summary.csv")).unwrap();
        let row: Vec<String> = text.lines().nth(1).unwrap().split(',').map(String::from).collect();
        row
    };
    let base: f64 = summary("q6400_g300_baseline")[5].parse().unwrap();
    let case = summary("q6400_r0.7_g300_p0.95");
    let m: f64 = case[5].parse().unwrap();
    let pct: f64 = case[8].parse().unwrap();
    assert!((pct - 100.0 * (m - base) / base).abs() < 5e-4);
}

#[test]
fn run_writes_case_layout_and_is_repeatable() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "run.conf", &format!("{SHORT}q_i = 7200\nbaseline_mode = true\ngamma_i = 300\n"));
    let out = |n: &str| dir.path().join(n);
    for n in ["a", "b"] {
        let o = sentinel(&["run", "--config", &cfg, "--out", out(n).to_str().unwrap()]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let case = "q7200_g300_baseline";
    for f in ["summary.csv", "runs.csv", "run-42/events.csv", "run-42/intervals.csv", "run-42/states.csv", "run-42/timespace_2_speed.csv"] {
        let a = std::fs::read(out("a").join(case).join(f)).unwrap();
        assert_eq!(a, std::fs::read(out("b").join(case).join(f)).unwrap(), "{f}");
    }
    let events = std::fs::read_to_string(out("a").join(case).join("run-42/events.csv")).unwrap();
    assert!(!events.contains("advisory"));
    assert!(events.contains("incident_start,300.000"));
}

#[test]
fn gen_table_small_grid() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.tbl");
    let args = ["gen-table", "--out", path.to_str().unwrap(), "--samples", "10000", "--seed", "3", "--grid", "D=4,G=3,S=2", "--dt", "0.01"];
    assert!(sentinel(&args).status.success());
    let first = std::fs::read(&path).unwrap();
    assert!(sentinel(&[&args[..], &["--threads", "2"]].concat()).status.success());
    assert_eq!(first, std::fs::read(&path).unwrap());
    let o = sentinel(&["prob", "--table", path.to_str().unwrap(), "--d", "0", "--ego-speed", "20", "--lane=15,3,0.5,30,3"]);
    assert_eq!(stdout(&o).trim(), "0.0000");
    let o = sentinel(&["gen-table", "--out", path.to_str().unwrap(), "--samples", "10"]);
    assert_eq!(o.status.code(), Some(2));
}
