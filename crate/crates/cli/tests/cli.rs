use std::path::Path;
use std::process::Command;

use mbcool::protocol::{run_from_manifest, RunManifest, ScheduleSource};

fn mbcool() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_mbcool"));
    c.env("RUST_LOG", "warn");
    c
}

fn header(path: &Path) -> String {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .next()
        .unwrap()
        .to_string()
}

#[test]
fn simulate_writes_tables_and_reproducible_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = mbcool()
        .args(["simulate", "--schedule", "beam", "--rounds", "20", "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert_eq!(header(&dir.path().join("fig2.csv")), "step,action");
    assert_eq!(header(&dir.path().join("fig3.csv")), "measurement,n,p_n");
    let fig2 = std::fs::read_to_string(dir.path().join("fig2.csv")).unwrap();
    assert_eq!(fig2.lines().count(), 21);

    let manifest_path = dir.path().join("manifest.json");
    let manifest = RunManifest::read(&manifest_path).unwrap();
    assert!(matches!(manifest.config.schedule, ScheduleSource::Actions(ref a) if a.len() == 20));
    let rerun = run_from_manifest(&manifest_path).unwrap();
    let recorded = manifest.summary["fidelity"].as_f64().unwrap();
    assert_eq!(rerun.fidelity, recorded);
    assert_eq!(
        rerun.success_prob,
        manifest.summary["success_prob"].as_f64().unwrap()
    );
}

#[test]
fn schedule_file_with_wrong_length_fails() {
    let dir = tempfile::tempdir().unwrap();
    let sched = dir.path().join("s.json");
    std::fs::write(&sched, "[1, 2, 3]").unwrap();
    let out = mbcool()
        .args(["simulate", "--rounds", "4", "--schedule"])
        .arg(&sched)
        .arg("--out")
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("schedule"));
}

#[test]
fn config_file_sets_run_parameters() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    let out_dir = dir.path().join("res");
    std::fs::write(
        &cfg,
        format!(
            "rounds = 5\nschedule = \"equal\"\nout = {:?}\n",
            out_dir.display().to_string()
        ),
    )
    .unwrap();
    let out = mbcool()
        .args(["simulate", "--rounds", "9", "--config"])
        .arg(&cfg)
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let fig2 = std::fs::read_to_string(out_dir.join("fig2.csv")).unwrap();
    assert_eq!(fig2.lines().count(), 6);
}

#[test]
fn train_writes_log_checkpoint_and_schedule() {
    let dir = tempfile::tempdir().unwrap();
    let out = mbcool()
        .args(["train", "--rounds", "8", "--updates", "3", "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert_eq!(
        header(&dir.path().join("train_log.csv")),
        "update,mean_reward,best_fidelity,wall_time_s"
    );
    assert!(dir.path().join("checkpoint.json").exists());
    let out = mbcool()
        .args(["simulate", "--rounds", "8", "--schedule"])
        .arg(dir.path().join("schedule.json"))
        .arg("--out")
        .arg(dir.path().join("sim"))
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn sweep_row_count_matches_grid() {
    let dir = tempfile::tempdir().unwrap();
    let out = mbcool()
        .args([
            "sweep",
            "--schedule",
            "equal",
            "--n-r-min",
            "4",
            "--n-r-max",
            "6",
            "--gammas",
            "0,1",
            "--out",
        ])
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let fig4 = std::fs::read_to_string(dir.path().join("fig4.csv")).unwrap();
    assert_eq!(fig4.lines().next(), Some("n_r,gamma,F,P_s"));
    assert_eq!(fig4.lines().count(), 1 + 3 * 2);
}

#[test]
fn check_runs_selected_criteria() {
    let out = mbcool()
        .args(["check", "--only", "1,2,4"])
        .output()
        .unwrap();
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(out.status.success(), "{text}");
    assert_eq!(text.lines().filter(|l| l.starts_with("PASS")).count(), 3);
}
