use std::path::Path;
use std::process::Command;

use kernelnet::checkpoint;
use kernelnet::trainer::evaluate;
use kernelnet_cli::commands::{self, Run};
use kernelnet_cli::experiment::load_data;
use kernelnet_cli::Config;
use serde_json::Value;

const SMALL: &str = "[data]\nn_per_class = 200\ntest_per_class = 200\n[train]\nepochs = 5\n";

fn run_in(dir: &Path, config: &str, seed: u64) -> Run {
    Run::new(Config::parse(config).unwrap(), dir.to_path_buf(), Some(seed)).unwrap()
}

fn log_lines(dir: &Path) -> Vec<Value> {
    std::fs::read_to_string(dir.join("metrics.jsonl"))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

fn cli(args: &[&str]) -> (i32, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_kernelnet")).args(args).output().unwrap();
    (out.status.code().unwrap(), String::from_utf8_lossy(&out.stdout).into_owned())
}

#[test]
fn gen_data_writes_the_full_training_set() {
    let dir = tempfile::tempdir().unwrap();
    let r = commands::gen_data(&run_in(dir.path(), "", 5)).unwrap();
    assert_eq!(r.train_rows, 10_000);
    let text = std::fs::read_to_string(&r.train_path).unwrap();
    assert_eq!(text.lines().next(), Some("x1,x2,x3,label"));
    assert_eq!(text.lines().count(), 10_001);

    let again = tempfile::tempdir().unwrap();
    let r2 = commands::gen_data(&run_in(again.path(), "", 5)).unwrap();
    assert_eq!(std::fs::read(&r.test_path).unwrap(), std::fs::read(&r2.test_path).unwrap());
}

#[test]
fn every_log_line_describes_itself_and_the_log_only_grows() {
    let dir = tempfile::tempdir().unwrap();
    let run = run_in(dir.path(), SMALL, 3);
    commands::train(&run).unwrap();
    let first = std::fs::read_to_string(dir.path().join("metrics.jsonl")).unwrap();
    for line in log_lines(dir.path()) {
        assert_eq!(line["command"], "train");
        assert_eq!(line["seed"], 3);
        assert_eq!(line["config_hash"], run.config.hash().as_str());
    }
    commands::train(&run).unwrap();
    let second = std::fs::read_to_string(dir.path().join("metrics.jsonl")).unwrap();
    assert!(second.starts_with(&first) && second.len() == 2 * first.len());
}

#[test]
fn zero_epochs_give_an_empty_history() {
    let dir = tempfile::tempdir().unwrap();
    let r = commands::train(&run_in(dir.path(), "[data]\nn_per_class = 50\n[train]\nepochs = 0\nlr = 0.1\n", 1)).unwrap();
    assert_eq!(r.epochs_run, 0);
    assert!(log_lines(dir.path()).iter().all(|l| l["event"] != "epoch"));
}

#[test]
fn reloaded_checkpoint_reproduces_the_final_accuracy() {
    let dir = tempfile::tempdir().unwrap();
    let run = run_in(dir.path(), SMALL, 12);
    let r = commands::train(&run).unwrap();
    let model = checkpoint::load(&r.checkpoint).unwrap();
    let data = load_data(&run.config, run.seed).unwrap();
    assert_eq!(evaluate(&model, &data.test).unwrap(), r.test_accuracy);
    let last_epoch = log_lines(dir.path()).into_iter().filter(|l| l["event"] == "epoch").last().unwrap();
    assert_eq!(last_epoch["test_accuracy"].as_f64().unwrap(), r.test_accuracy);
}

#[test]
fn ablation_rows_cover_the_requested_axes() {
    let dir = tempfile::tempdir().unwrap();
    let config = format!("{SMALL}[ablate]\nkernels = learned, rbf:1, poly:10\nactivations = relu, sigmoid\n");
    let rows = commands::ablate(&run_in(dir.path(), &config, 2)).unwrap();
    assert_eq!(rows.len(), 6);
    assert!(rows.iter().any(|r| r.kernel == "learned" && r.activation == "relu" && r.status == "ok"));
    // a fixed kernel ignores the activation axis
    let rbf: Vec<_> = rows.iter().filter(|r| r.kernel == "rbf:1").collect();
    assert_eq!(rbf[0].test_accuracy, rbf[1].test_accuracy);
}

#[test]
fn divergent_variants_are_flagged_unstable() {
    let dir = tempfile::tempdir().unwrap();
    let config = "[data]\nn_per_class = 100\ntest_per_class = 50\n[train]\nepochs = 2\nlr = 1e300\n[ablate]\nkernels = learned\nactivations = none\n";
    let rows = commands::ablate(&run_in(dir.path(), config, 2)).unwrap();
    assert_eq!(rows[0].status, "unstable");
    assert_eq!(rows[0].test_accuracy, None);
}

#[test]
fn rectification_needs_a_backbone() {
    let dir = tempfile::tempdir().unwrap();
    let config = format!("{SMALL}[ablate]\nrectify = false, true\n");
    let err = commands::ablate(&run_in(dir.path(), &config, 2)).unwrap_err();
    assert_eq!(err.exit_code(), 2);
}

#[test]
fn distillation_records_its_temperature() {
    let dir = tempfile::tempdir().unwrap();
    let config = format!("{SMALL}[distill]\nteacher_backbone = 3, 8, 4\nstudent_backbone = 3, 3\n");
    let r = commands::distill(&run_in(dir.path(), &config, 4)).unwrap();
    assert_eq!(r.temperature, 20.0);
    assert_eq!(r.students.iter().map(|s| s.head.as_str()).collect::<Vec<_>>(), ["kernel", "linear"]);
    for line in log_lines(dir.path()) {
        assert_eq!(line["temperature"], 20.0);
    }
}

#[test]
fn self_distillation_recovers_the_teacher() {
    let dir = tempfile::tempdir().unwrap();
    let config = "[data]\nn_per_class = 1000\ntest_per_class = 1000\n[train]\nepochs = 30\n\
        [distill]\nteacher_backbone = 3, 16, 8\nteacher_hidden_activation = tanh\n\
        student_backbone = 3, 16, 8\nstudent_hidden_activation = tanh\nstudent_heads = linear\n";
    let r = commands::distill(&run_in(dir.path(), config, 6)).unwrap();
    let gap = r.teacher_accuracy - r.students[0].test_accuracy;
    assert!(gap.abs() <= 0.01, "teacher {} student {}", r.teacher_accuracy, r.students[0].test_accuracy);
}

#[test]
fn full_budget_matches_full_data_training() {
    let dir = tempfile::tempdir().unwrap();
    let config = format!("{SMALL}[active]\nbudgets = 0.3, 0.5, 1.0\n");
    let rows = commands::active(&run_in(dir.path(), &config, 8)).unwrap();
    assert_eq!(rows.len(), 2 * 3 * 3);
    let trained = tempfile::tempdir().unwrap();
    for head in ["kernel", "linear"] {
        let t = commands::train(&run_in(trained.path(), &format!("{SMALL}[model]\nhead = {head}\n"), 8)).unwrap();
        for r in rows.iter().filter(|r| r.head == head && r.budget_fraction == 1.0) {
            assert_eq!(r.labeled, 400);
            assert_eq!(r.test_accuracy, t.test_accuracy, "{head}/{}", r.strategy);
        }
    }
}

#[test]
fn check_reports_each_property_and_exits_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.ini");
    std::fs::write(&cfg, "[run]\nseed = 1\n[check]\ngrad_configs = 6\npsd_draws = 10\n").unwrap();
    let out = dir.path().join("o");
    let (code, stdout) = cli(&["check", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code, 0, "{stdout}");
    assert!(stdout.lines().all(|l| l.starts_with("PASS")));
    assert!(stdout.contains("[1e-10 absolute"));
}

#[test]
fn failed_property_exits_with_4() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.ini");
    std::fs::write(&cfg, "[check]\ngrad_configs = 2\npsd_draws = 2\nlimit_order = 50\n").unwrap();
    let out = dir.path().join("o");
    let (code, stdout) =
        cli(&["check", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--seed", "3"]);
    assert_eq!(code, 4);
    assert!(stdout.contains("FAIL  monomials of order 50"));
}

#[test]
fn config_and_numerical_errors_map_to_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    let out = out.to_str().unwrap();
    // no seed anywhere
    assert_eq!(cli(&["train", "--out", out]).0, 2);

    let bad = dir.path().join("bad.ini");
    std::fs::write(&bad, "[train]\nepochs = many\n").unwrap();
    assert_eq!(cli(&["train", "--config", bad.to_str().unwrap(), "--out", out, "--seed", "1"]).0, 2);

    let missing = dir.path().join("missing.ini");
    std::fs::write(&missing, "[data]\nsource = csv\ntrain_path = /nonexistent/a.csv\ntest_path = /nonexistent/b.csv\n").unwrap();
    assert_eq!(cli(&["train", "--config", missing.to_str().unwrap(), "--out", out, "--seed", "1"]).0, 2);

    let diverge = dir.path().join("diverge.ini");
    std::fs::write(&diverge, "[data]\nn_per_class = 50\n[train]\nepochs = 2\nlr = 1e300\n").unwrap();
    assert_eq!(cli(&["train", "--config", diverge.to_str().unwrap(), "--out", out, "--seed", "1"]).0, 3);
}

#[test]
fn csv_data_round_trips_through_train() {
    let dir = tempfile::tempdir().unwrap();
    let g = commands::gen_data(&run_in(dir.path(), SMALL, 9)).unwrap();
    let synthetic = commands::train(&run_in(&dir.path().join("a"), SMALL, 9)).unwrap();
    let config = format!(
        "[data]\nsource = csv\ntrain_path = {}\ntest_path = {}\n[train]\nepochs = 5\n",
        g.train_path.display(),
        g.test_path.display()
    );
    let from_csv = commands::train(&run_in(&dir.path().join("b"), &config, 9)).unwrap();
    assert_eq!(from_csv.test_accuracy, synthetic.test_accuracy);
}
