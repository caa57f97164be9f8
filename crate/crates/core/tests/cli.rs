use std::path::Path;
use std::process::{Command, Output};

use modnav::harness::{read_metrics, CSV_HEADER, ENTROPY_FIGURE, RETURN_FIGURE};

fn modnav(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_modnav"))
        .args(args)
        .current_dir(cwd)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn usage_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(modnav(&["nonsense"], dir.path()).status.code(), Some(1));
    assert_eq!(modnav(&["train", "--bogus"], dir.path()).status.code(), Some(1));
    assert_eq!(modnav(&["train", "--arch", "transformer"], dir.path()).status.code(), Some(1));
    assert_eq!(modnav(&["train", "--set", "train.n_envs=0"], dir.path()).status.code(), Some(1));
    assert_eq!(modnav(&["summarize", "--out", "missing"], dir.path()).status.code(), Some(1));
    assert_eq!(modnav(&["--help"], dir.path()).status.code(), Some(0));
}

#[test]
fn experiment_summarize_plot_and_rollout() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("exp.toml");
    std::fs::write(
        &cfg,
        "[experiment]\nseeds = [0, 1]\n\n[train]\nn_envs = 2\nrollout_len = 32\nn_epochs = 1\n\n[env]\nmax_steps = 48\n",
    )
    .unwrap();
    let o = modnav(&["experiment", "--config", "exp.toml", "--updates", "2", "--out", "runs"], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let runs = dir.path().join("runs");
    for arch in ["insect", "gru", "mlp"] {
        for seed in ["0", "1"] {
            let d = runs.join(arch).join(seed);
            for f in ["metrics.csv", "checkpoint.bin", "config.snapshot", "status"] {
                assert!(d.join(f).is_file(), "{}", d.join(f).display());
            }
            let rows = read_metrics(&d.join("metrics.csv")).unwrap();
            assert_eq!(rows.len(), 2);
            let header = std::fs::read_to_string(d.join("metrics.csv")).unwrap();
            assert_eq!(header.lines().next().unwrap(), CSV_HEADER.join(","));
        }
    }
    assert!(runs.join("summary.md").is_file());
    assert!(runs.join(RETURN_FIGURE).is_file() && runs.join(ENTROPY_FIGURE).is_file());

    let s1 = modnav(&["summarize", "--out", "runs"], dir.path());
    let s2 = modnav(&["summarize", "--out", "runs"], dir.path());
    assert!(s1.status.success());
    assert_eq!(stdout(&s1), stdout(&s2));
    assert!(stdout(&s1).contains("Module entropy") && stdout(&s1).contains("vs. mlp"));

    let figs = dir.path().join("figs");
    let p = modnav(&["plot", "--out", "runs", "--plots", "figs"], dir.path());
    assert!(p.status.success());
    assert_eq!(std::fs::read(figs.join(RETURN_FIGURE)).unwrap(), std::fs::read(runs.join(RETURN_FIGURE)).unwrap());

    // Rerunning skips completed runs and leaves metrics untouched.
    let before = std::fs::read(runs.join("gru/1/metrics.csv")).unwrap();
    let again = modnav(&["experiment", "--config", "exp.toml", "--updates", "2", "--out", "runs"], dir.path());
    assert!(again.status.success());
    assert_eq!(std::fs::read(runs.join("gru/1/metrics.csv")).unwrap(), before);

    let r = modnav(&["rollout", "--checkpoint", "runs/insect/0/checkpoint.bin", "--seed", "3", "--out", "traj.csv"], dir.path());
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let traj = std::fs::read_to_string(dir.path().join("traj.csv")).unwrap();
    let mut lines = traj.lines();
    assert_eq!(lines.next().unwrap(), "step,x,y,heading,u,omega,reward,d_pred,d_obs,terminated");
    let body: Vec<&str> = lines.collect();
    assert!(!body.is_empty() && body.len() <= 48);
    assert!(body.last().unwrap().ends_with(",1"));
    let wrong = modnav(&["rollout", "--checkpoint", "runs/insect/0/checkpoint.bin", "--arch", "mlp", "--out", "t.csv"], dir.path());
    assert_eq!(wrong.status.code(), Some(1));
}

#[test]
fn checks_exit_zero_when_passing() {
    let dir = tempfile::tempdir().unwrap();
    let e = modnav(&["envcheck", "--pairs", "200", "--seed", "5"], dir.path());
    assert_eq!(e.status.code(), Some(0), "{}", stdout(&e));
    assert!(stdout(&e).contains("PASS"));
    let g = modnav(&["gradcheck", "--seed", "2"], dir.path());
    assert_eq!(g.status.code(), Some(0), "{}", stdout(&g));
    assert!(stdout(&g).contains("checks passed"));
}
